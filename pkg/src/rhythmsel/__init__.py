"""Frame selection in front of a recurrent event classifier, with rhythm-perturbation evaluation."""

__version__ = "0.1.0"
