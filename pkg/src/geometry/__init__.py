"""
Camera geometry: Snavely projection model, robust weighting and Jacobians
"""
