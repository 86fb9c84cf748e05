"""
Power normalization and the AWGN channel
========================================

A latent vector of n reals is paired into n/2 complex symbols, scaled to
unit average symbol power and sent through complex Gaussian noise whose
variance follows the SNR.
"""

import numpy as np

from pcjscc import channel as ch

rng = np.random.default_rng(1)
latent = rng.normal(size=(5000, 16)) * 3.0 + 1.0

z = ch.power_normalize(latent)
print("symbol power after normalization:", ch.symbol_power(z)[:4])

# the first complex symbol of the first codeword
print("pairing z0 + j z1:", ch.to_complex(z)[0, 0], "from", z[0, :2])

for snr in (0.0, 10.0, 20.0):
    y = ch.transmit(z, ch.ChannelConfig(snr, 16), np.random.default_rng(2))
    print("nominal %4.1f dB -> measured %6.3f dB, noise variance %.4f"
          % (snr, ch.measure_snr(z, y), ch.snr_to_noise_variance(snr)))

# the noiseless sentinel passes the codeword through untouched
y = ch.transmit(z, ch.ChannelConfig(ch.NOISELESS, 16))
print("noiseless channel is the identity:", y is z)
