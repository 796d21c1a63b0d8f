//! Zero-phase Butterworth band-pass filtering.
//!
//! The filter is a 4th-order analog Butterworth prototype transformed to a
//! band-pass (8 poles) and discretized with the prewarped bilinear transform.
//! It runs as a cascade of four second-order sections, forward then backward,
//! on a signal padded at both ends by odd reflection.

use nalgebra::Complex;

/// Order of the analog low-pass prototype.
pub const PROTOTYPE_ORDER: usize = 4;

/// Order of the resulting digital band-pass filter.
pub const FILTER_ORDER: usize = 2 * PROTOTYPE_ORDER;

/// Samples of odd-reflection padding added at each end before filtering.
pub const PAD_LEN: usize = 3 * FILTER_ORDER;

/// One second-order section, `b0 + b1 z⁻¹ + b2 z⁻²` over `1 + a1 z⁻¹ + a2 z⁻²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, w: f64) -> Complex<f64> {
        let z1 = Complex::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = Complex::new(self.b[0], 0.0) + z1 * self.b[1] + z2 * self.b[2];
        let den = Complex::new(1.0, 0.0) + z1 * self.a[0] + z2 * self.a[1];
        num / den
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }
}

/// A designed band-pass filter as a cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPassFilter {
    sections: Vec<Biquad>,
}

impl BandPassFilter {
    /// Designs the filter for edges `low < high` (Hz) at sampling rate `fs`.
    /// The caller validates `0 < low < high < fs / 2`.
    pub fn butterworth(low: f64, high: f64, fs: f64) -> Self {
        let warp = |f: f64| 2.0 * fs * (std::f64::consts::PI * f / fs).tan();
        let wl = warp(low);
        let wh = warp(high);
        let bw = wh - wl;
        let w0_sq = wl * wh;
        let two_fs = 2.0 * fs;

        let mut sections = Vec::with_capacity(PROTOTYPE_ORDER);
        let n = PROTOTYPE_ORDER as f64;
        for k in 1..=PROTOTYPE_ORDER / 2 {
            let theta = std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * (2.0 * k as f64 - 1.0) / (2.0 * n);
            let p = Complex::from_polar(1.0, theta);
            let pb = p * bw;
            let disc = (pb * pb - Complex::new(4.0 * w0_sq, 0.0)).sqrt();
            for s in [(pb + disc) * 0.5, (pb - disc) * 0.5] {
                let z = (Complex::new(two_fs, 0.0) + s) / (Complex::new(two_fs, 0.0) - s);
                sections.push(Biquad {
                    b: [1.0, 0.0, -1.0],
                    a: [-2.0 * z.re, z.norm_sqr()],
                });
            }
        }

        let center = 2.0 * (w0_sq.sqrt() / two_fs).atan();
        let mut filter = BandPassFilter { sections };
        let gain = filter.response(center).norm();
        let per_section = (1.0 / gain).powf(1.0 / filter.sections.len() as f64);
        for s in &mut filter.sections {
            for b in &mut s.b {
                *b *= per_section;
            }
        }
        filter
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Complex frequency response at `w` radians per sample (single pass).
    pub fn response(&self, w: f64) -> Complex<f64> {
        self.sections
            .iter()
            .fold(Complex::new(1.0, 0.0), |acc, s| acc * s.response(w))
    }

    /// Steady-state transposed direct form II states for a unit step input.
    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut level = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let out = s.dc_gain() * level;
                let z2 = s.b[2] * level - s.a[1] * out;
                let z1 = s.b[1] * level - s.a[0] * out + z2;
                level = out;
                [z1, z2]
            })
            .collect()
    }

    /// Causal filtering with initial states scaled by the first sample.
    fn run(&self, x: &mut [f64], step: &[[f64; 2]]) {
        let x0 = match x.first() {
            Some(&v) => v,
            None => return,
        };
        for (s, zi) in self.sections.iter().zip(step) {
            let mut z1 = zi[0] * x0;
            let mut z2 = zi[1] * x0;
            for v in x.iter_mut() {
                let input = *v;
                let y = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[0] * y + z2;
                z2 = s.b[2] * input - s.a[1] * y;
                *v = y;
            }
        }
    }

    /// Zero-phase forward-backward filtering; output length equals input length.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = PAD_LEN.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let step = self.step_states();
        self.run(&mut ext, &step);
        ext.reverse();
        self.run(&mut ext, &step);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}
