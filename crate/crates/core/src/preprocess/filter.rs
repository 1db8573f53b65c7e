//! Butterworth band-pass design as second-order sections, applied
//! forward-backward for zero phase.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// One biquad, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

/// Design an order-`order` Butterworth band-pass (a `2 * order` pole
/// digital filter) by bilinear transform with pre-warping. The gain is
/// normalized to 1 at the geometric band center.
pub fn butter_bandpass(order: usize, low: f64, high: f64, fs: f64) -> Result<SosFilter> {
    let nyquist = fs / 2.0;
    if !(low > 0.0 && low < high && high < nyquist) || order == 0 {
        return Err(Error::BandOutOfRange { low, high, nyquist });
    }
    let warp = |f: f64| 2.0 * fs * (std::f64::consts::PI * f / fs).tan();
    let (wl, wh) = (warp(low), warp(high));
    let w0 = (wl * wh).sqrt();
    let bw = wh - wl;
    let n = order as f64;

    let mut poles = Vec::with_capacity(2 * order);
    for k in 1..=order {
        let theta = std::f64::consts::PI * (2.0 * k as f64 + n - 1.0) / (2.0 * n);
        let p = Complex64::from_polar(1.0, theta);
        let half = p * bw / 2.0;
        let disc = (half * half - w0 * w0).sqrt();
        for s in [half + disc, half - disc] {
            // bilinear map into the z-plane
            let z = (2.0 * fs + s) / (2.0 * fs - s);
            poles.push(z);
        }
    }

    let mut complex_upper: Vec<Complex64> = poles
        .iter()
        .copied()
        .filter(|z| z.im > 1e-12 * z.norm().max(1.0))
        .collect();
    let mut reals: Vec<f64> = poles
        .iter()
        .filter(|z| z.im.abs() <= 1e-12 * z.norm().max(1.0))
        .map(|z| z.re)
        .collect();
    complex_upper.sort_by(|a, b| a.arg().partial_cmp(&b.arg()).unwrap());
    reals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if reals.len() % 2 != 0 {
        return Err(Error::InvalidArgument(
            "unpaired real pole in band-pass design".into(),
        ));
    }

    let mut sections = Vec::with_capacity(order);
    for p in &complex_upper {
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        });
    }
    for pair in reals.chunks(2) {
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -(pair[0] + pair[1]), pair[0] * pair[1]],
        });
    }

    let wc = 2.0 * (w0 / (2.0 * fs)).atan();
    let mut filt = SosFilter { sections };
    let g = filt.response(wc).norm();
    filt.sections[0].b.iter_mut().for_each(|b| *b /= g);
    Ok(filt)
}

impl SosFilter {
    /// Complex frequency response at digital angular frequency `w` (rad/sample).
    pub fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        self.sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| {
            let num = s.b[0] + z1 * s.b[1] + z2 * s.b[2];
            let den = s.a[0] + z1 * s.a[1] + z2 * s.a[2];
            acc * num / den
        })
    }

    /// Steady-state initial conditions for a unit step, per section.
    fn zi(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        let mut out = Vec::with_capacity(self.sections.len());
        for s in &self.sections {
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            // (I - A^T) zi = b[1:] - a[1:] b0, A the companion matrix
            let (m00, m01, m10, m11) = (1.0 + a1, -1.0, a2, 1.0);
            let (r0, r1) = (b1 - a1 * b0, b2 - a2 * b0);
            let det = m00 * m11 - m01 * m10;
            let z0 = (r0 * m11 - m01 * r1) / det;
            let z1 = (m00 * r1 - m10 * r0) / det;
            out.push([z0 * scale, z1 * scale]);
            scale *= (b0 + b1 + b2) / (1.0 + a1 + a2);
        }
        out
    }

    fn filter_in_place(&self, x: &mut [f64], zi: &[[f64; 2]], x0: f64) {
        for (s, z) in self.sections.iter().zip(zi) {
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            let (mut s0, mut s1) = (z[0] * x0, z[1] * x0);
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + s0;
                s0 = b1 * xin - a1 * y + s1;
                s1 = b2 * xin - a2 * y;
                *v = y;
            }
        }
    }

    /// Zero-phase forward-backward filtering with odd-extension padding.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let zi = self.zi();
        let first = ext[0];
        self.filter_in_place(&mut ext, &zi, first);
        ext.reverse();
        let first = ext[0];
        self.filter_in_place(&mut ext, &zi, first);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_limits_are_checked() {
        assert!(butter_bandpass(5, 0.01, 0.3, 0.5).is_err());
        assert!(butter_bandpass(5, 0.1, 0.01, 0.5).is_err());
        assert!(butter_bandpass(5, 0.0, 0.1, 0.5).is_err());
    }

    #[test]
    fn unit_gain_at_center_and_half_power_at_edges() {
        let fs = 0.5;
        let f = butter_bandpass(5, 0.01, 0.1, fs).unwrap();
        assert_eq!(f.sections.len(), 5);
        let w = |hz: f64| 2.0 * std::f64::consts::PI * hz / fs;
        let wc = 2.0 * ((2.0 * fs * (std::f64::consts::PI * 0.01 / fs).tan()
            * 2.0
            * fs
            * (std::f64::consts::PI * 0.1 / fs).tan())
        .sqrt()
            / (2.0 * fs))
            .atan();
        assert!((f.response(wc).norm() - 1.0).abs() < 1e-9);
        // Butterworth edges sit at -3 dB
        for edge in [0.01, 0.1] {
            let g = f.response(w(edge)).norm();
            assert!((g - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6, "{g}");
        }
        assert!(f.response(0.0).norm() < 1e-9);
        assert!(f.response(std::f64::consts::PI).norm() < 1e-9);
    }

    #[test]
    fn constant_input_steady_state_has_no_transient() {
        // a step starting in steady state produces zero output for a band-pass
        let f = butter_bandpass(5, 0.01, 0.1, 0.5).unwrap();
        let y = f.filtfilt(&vec![3.0; 200]);
        assert!(y.iter().all(|v| v.abs() < 1e-8), "{:?}", &y[..4]);
    }
}
