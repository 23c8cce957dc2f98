"""Empirical coefficients for the acoustic channel physics.

Version 1 of the constant set. Bump ``CONSTANTS_VERSION`` whenever any
coefficient below changes so that cached tables are invalidated.
"""

CONSTANTS_VERSION = 1

# Thorp absorption, f in kHz, result in dB/km:
#   a(f) = T1 f^2/(1+f^2) + T2 f^2/(T3+f^2) + T4 f^2 + T5
THORP = (0.11, 44.0, 4100.0, 2.75e-4, 0.003)

# Ambient noise components, dB re uPa per Hz, f in kHz.
TURBULENCE = (17.0, -30.0)                # c0 + c1 log f
SHIPPING = (40.0, 20.0, 26.0, -60.0, 0.03)  # c0 + c1 (s-0.5) + c2 log f + c3 log(f+c4)
WAVES = (50.0, 7.5, 20.0, -40.0, 0.4)     # c0 + c1 sqrt(w) + c2 log f + c3 log(f+c4)
THERMAL = (-15.0, 20.0)                   # c0 + c1 log f

# Log-linear noise approximation valid up to 100 kHz.
SIMPLE_NOISE_N1_DB = 50.0
SIMPLE_NOISE_ETA_DB_PER_DEC = 18.0
SIMPLE_NOISE_F_MAX_KHZ = 100.0

# Frequency search range (kHz) for optimal frequency and band location.
F_MIN_KHZ = 0.1
F_MAX_KHZ = 200.0
F0_XTOL_KHZ = 1e-4

SOUND_SPEED_M_S = 1500.0
