//! Shared 2-D FFT machinery for the low-pass filter, spectral metrics, and
//! fractal terrain synthesis. Forward transforms are unnormalized; inverses
//! carry the 1/(H·W) factor.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

/// Signed integer frequency for index i of an n-point DFT (min-image).
pub fn signed_freq(i: usize, n: usize) -> isize {
    if i <= n / 2 {
        i as isize
    } else {
        i as isize - n as isize
    }
}

/// Radial wavenumber magnitude at spectral index (i, j) of an h×w grid.
pub fn radial_wavenumber(i: usize, j: usize, h: usize, w: usize) -> f64 {
    let kx = signed_freq(i, h) as f64;
    let ky = signed_freq(j, w) as f64;
    (kx * kx + ky * ky).sqrt()
}

fn fft_rows(data: &mut Array2<Complex64>, inverse: bool) {
    let (h, w) = data.dim();
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    let mut row = vec![Complex64::default(); w];
    for i in 0..h {
        for j in 0..w {
            row[j] = data[(i, j)];
        }
        fft.process(&mut row);
        for j in 0..w {
            data[(i, j)] = row[j];
        }
    }
}

fn fft_cols(data: &mut Array2<Complex64>, inverse: bool) {
    let (h, w) = data.dim();
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    let mut col = vec![Complex64::default(); h];
    for j in 0..w {
        for i in 0..h {
            col[i] = data[(i, j)];
        }
        fft.process(&mut col);
        for i in 0..h {
            data[(i, j)] = col[i];
        }
    }
}

/// Unnormalized forward 2-D DFT of a real field.
pub fn fft2d(field: &Array2<f64>) -> Array2<Complex64> {
    let mut data = field.mapv(|v| Complex64::new(v, 0.0));
    fft_rows(&mut data, false);
    fft_cols(&mut data, false);
    data
}

/// Normalized inverse 2-D DFT, returning the real part.
pub fn ifft2d_real(spec: &Array2<Complex64>) -> Array2<f64> {
    let mut data = spec.clone();
    fft_rows(&mut data, true);
    fft_cols(&mut data, true);
    let norm = 1.0 / (data.nrows() * data.ncols()) as f64;
    data.mapv(|c| c.re * norm)
}

/// Radial mask weight for the low-pass filter. `taper_width = None` is a hard
/// cutoff; otherwise a raised-cosine roll-off from k_c to k_c + width.
pub fn lowpass_weight(k: f64, k_c: f64, taper_width: Option<f64>) -> f64 {
    match taper_width {
        None => {
            if k <= k_c {
                1.0
            } else {
                0.0
            }
        }
        Some(width) => {
            if k <= k_c {
                1.0
            } else if k >= k_c + width {
                0.0
            } else {
                0.5 * (1.0 + (std::f64::consts::PI * (k - k_c) / width).cos())
            }
        }
    }
}

/// Applies the radial low-pass mask in Fourier space. The mask is symmetric
/// under k -> -k, so conjugate symmetry of the real input is preserved and the
/// output is real up to rounding.
pub fn lowpass_2d(field: &Array2<f64>, k_c: f64, taper_width: Option<f64>) -> Array2<f64> {
    let (h, w) = field.dim();
    let mut spec = fft2d(field);
    for i in 0..h {
        for j in 0..w {
            let k = radial_wavenumber(i, j, h, w);
            spec[(i, j)] *= lowpass_weight(k, k_c, taper_width);
        }
    }
    ifft2d_real(&spec)
}

/// Largest radial wavenumber present on an h×w grid; a cutoff at or above
/// this value makes the low-pass an identity.
pub fn max_radial_wavenumber(h: usize, w: usize) -> f64 {
    let kx = (h / 2) as f64;
    let ky = (w / 2) as f64;
    (kx * kx + ky * ky).sqrt()
}

/// Wavenumber corresponding to the LR pixel size for an HR grid downscaled by
/// `factor`: the finest scale the LR grid can represent.
pub fn lr_reference_wavenumber(hr_size: usize, factor: usize) -> f64 {
    hr_size as f64 / (2.0 * factor as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn roundtrip_identity() {
        let f = Array2::from_shape_fn((16, 12), |(i, j)| (i as f64 * 0.7).sin() + (j as f64).cos());
        let back = ifft2d_real(&fft2d(&f));
        for (a, b) in f.iter().zip(back.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn parseval_holds() {
        let f = Array2::from_shape_fn((8, 8), |(i, j)| (i * 8 + j) as f64 * 0.1 - 3.0);
        let spec = fft2d(&f);
        let spatial: f64 = f.iter().map(|v| v * v).sum();
        let spectral: f64 = spec.iter().map(|c| c.norm_sqr()).sum();
        assert_abs_diff_eq!(spectral, spatial * 64.0, epsilon = 1e-6);
    }

    #[test]
    fn signed_freq_wraps() {
        assert_eq!(signed_freq(0, 8), 0);
        assert_eq!(signed_freq(4, 8), 4);
        assert_eq!(signed_freq(5, 8), -3);
        assert_eq!(signed_freq(7, 8), -1);
    }
}
