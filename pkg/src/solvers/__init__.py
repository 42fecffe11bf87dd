"""
Landmark elimination (square-root and Schur complement), PCG and the LM driver
"""
