"""
BAL problem ingestion, preprocessing and synthetic problem generation
"""
