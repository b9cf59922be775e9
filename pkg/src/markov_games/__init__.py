"""Solvers for zero-sum repeated games with Markov private states on both sides."""
