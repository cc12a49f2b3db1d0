"""HMC and NUTS driven by latent Hamiltonian neural network gradients."""
