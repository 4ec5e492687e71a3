"""
growthcast - multivariate recurrent forecasting of epidemic growth curves
Рекуррентное прогнозирование роста эпидемических кривых
"""

__version__ = "1.0.0"
