from robusthide.kernels import BACKEND
