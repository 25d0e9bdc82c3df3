"""Continuous-time echo state network surrogates for stiff ODEs."""
