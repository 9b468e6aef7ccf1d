"""Phase congruency from a bank of log-Gabor quadrature filters (Kovesi's construction)."""
import numpy as np


def _filter_grid(rows, cols):
    u = np.fft.fftfreq(cols)[None, :]
    v = np.fft.fftfreq(rows)[:, None]
    radius = np.sqrt(u ** 2 + v ** 2)
    radius[0, 0] = 1.0
    theta = np.arctan2(-v, u)
    return radius, theta


def phase_congruency(img, nscale=4, norient=6, min_wavelength=3, mult=2.1,
                     sigma_onf=0.55, k=2.0, cutoff=0.5, g=10.0, eps=1e-4):
    """Overall phase congruency map in [0, 1] for a 2-D image.

    Energy from every orientation is noise-compensated (threshold from the
    median smallest-scale response), weighted by frequency spread, and
    normalised by the summed filter amplitudes.
    """
    img = np.asarray(img, dtype=np.float64)
    rows, cols = img.shape
    image_fft = np.fft.fft2(img)
    radius, theta = _filter_grid(rows, cols)
    sintheta, costheta = np.sin(theta), np.cos(theta)

    lowpass = 1.0 / (1.0 + (radius / 0.45) ** 30)
    radial = []
    for s in range(nscale):
        fo = 1.0 / (min_wavelength * mult ** s)
        lg = np.exp(-np.log(radius / fo) ** 2 / (2 * np.log(sigma_onf) ** 2)) * lowpass
        lg[0, 0] = 0.0
        radial.append(lg)

    energy_all = np.zeros((rows, cols))
    amp_all = np.zeros((rows, cols))
    for o in range(norient):
        angle = o * np.pi / norient
        ds = sintheta * np.cos(angle) - costheta * np.sin(angle)
        dc = costheta * np.cos(angle) + sintheta * np.sin(angle)
        dtheta = np.minimum(np.abs(np.arctan2(ds, dc)) * norient / 2, np.pi)
        spread = (np.cos(dtheta) + 1) / 2

        sum_e = np.zeros((rows, cols))
        sum_o = np.zeros((rows, cols))
        sum_an = np.zeros((rows, cols))
        responses = []
        tau = 0.0
        max_an = None
        for s in range(nscale):
            eo = np.fft.ifft2(image_fft * radial[s] * spread)
            an = np.abs(eo)
            responses.append(eo)
            sum_an += an
            sum_e += eo.real
            sum_o += eo.imag
            if s == 0:
                tau = np.median(sum_an) / np.sqrt(np.log(4))
                max_an = an
            else:
                max_an = np.maximum(max_an, an)

        x_energy = np.sqrt(sum_e ** 2 + sum_o ** 2) + eps
        mean_e = sum_e / x_energy
        mean_o = sum_o / x_energy
        energy = np.zeros((rows, cols))
        for eo in responses:
            e, od = eo.real, eo.imag
            energy += e * mean_e + od * mean_o - np.abs(e * mean_o - od * mean_e)

        total_tau = tau * (1 - (1 / mult) ** nscale) / (1 - 1 / mult)
        noise_mean = total_tau * np.sqrt(np.pi / 2)
        noise_sigma = total_tau * np.sqrt((4 - np.pi) / 2)
        threshold = max(noise_mean + k * noise_sigma, eps)
        energy = np.maximum(energy - threshold, 0.0)

        width = (sum_an / (max_an + eps) - 1) / (nscale - 1)
        weight = 1.0 / (1.0 + np.exp((cutoff - width) * g))
        energy_all += weight * energy
        amp_all += sum_an

    return energy_all / (amp_all + eps)
