"""
labornet: worker types and labor markets from matched employer-employee networks

Bipartite blockmodel clustering, a Roy-model general equilibrium, labor-supply
estimation, sectoral shock simulation and the reduced-form validation battery.
"""

__version__ = "0.1.0"
