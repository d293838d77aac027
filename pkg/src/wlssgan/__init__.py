"""Semi-supervised GAN with weighted adversarial / feature-matching generator loss
for 3-class radar clutter spectra, built on a small numpy autodiff engine."""

__version__ = "0.1.0"
