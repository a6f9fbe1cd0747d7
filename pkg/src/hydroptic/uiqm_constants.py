"""Constants of the Underwater Image Quality Measure.

Source: K. Panetta, C. Gao, S. Agaian, "Human-Visual-System-Inspired
Underwater Image Quality Measures", IEEE Journal of Oceanic Engineering
41(3), 2016.  Block sizes and the zero-guard in EME are not fixed by that
reference; the values here follow the widely used Python port of the measure
(8x8 blocks, zero block extrema replaced by 1 on the 8-bit scale).
"""

# UIQM = C_UICM * UICM + C_UISM * UISM + C_UICONM * UIConM
C_UICM = 0.0282
C_UISM = 0.2953
C_UICONM = 3.5753

# UICM = UICM_MEAN_WEIGHT * sqrt(mu_rg^2 + mu_yb^2) + UICM_SPREAD_WEIGHT * sqrt(s_rg^2 + s_yb^2)
UICM_MEAN_WEIGHT = -0.0268
UICM_SPREAD_WEIGHT = 0.1586

# asymmetric alpha-trimmed mean: ceil(alpha_L*K) lowest and floor(alpha_R*K) highest dropped
ALPHA_L = 0.1
ALPHA_R = 0.1

# UISM channel weights (luma weights of the visual system)
LAMBDA_R = 0.299
LAMBDA_G = 0.587
LAMBDA_B = 0.114

# EME / logAMEE block edge in pixels
EME_BLOCK = 8
LOGAMEE_BLOCK = 8

# PLIP model parameters for 8-bit data
PLIP_GAMMA = 1026.0
PLIP_K = 1026.0
