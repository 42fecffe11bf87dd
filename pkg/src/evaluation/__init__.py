"""
Convergence traces, performance profiles and result files
"""
