"""Quasi-periodic response solutions by averaging and KAM iteration."""
