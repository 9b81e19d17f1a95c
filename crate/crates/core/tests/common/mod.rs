//! Shared fixtures for the integration suite: deterministic stand-in
//! datasets in the exact on-disk formats the production loaders consume.
//! Set QSVRG_DATA_DIR to a directory holding the real files and the
//! dataset-backed checks pick them up instead.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qsvrg::data::MnistData;

/// Real-data override: `$QSVRG_DATA_DIR/<name>` if it exists.
pub fn data_override(name: &str) -> Option<PathBuf> {
    let dir = std::env::var_os("QSVRG_DATA_DIR")?;
    let p = Path::new(&dir).join(name);
    p.is_file().then_some(p)
}

/// One appliance: off most of the time, drawing a random load for a random
/// stretch of minutes when an hour-dependent start event fires. This is
/// what makes the columns look like the real meter: zero-inflated, spiky,
/// heavy-tailed after z-scoring.
struct Appliance {
    minutes_left: u32,
    kw: f64,
}

impl Appliance {
    fn new() -> Self {
        Appliance { minutes_left: 0, kw: 0.0 }
    }

    fn step(
        &mut self,
        rng: &mut ChaCha8Rng,
        start_prob: f64,
        duration: std::ops::Range<u32>,
        load_kw: std::ops::Range<f64>,
    ) -> f64 {
        if self.minutes_left == 0 {
            if rng.gen_bool(start_prob) {
                self.minutes_left = rng.gen_range(duration);
                self.kw = rng.gen_range(load_kw);
            }
        } else {
            self.minutes_left -= 1;
        }
        if self.minutes_left > 0 {
            self.kw
        } else {
            0.0
        }
    }
}

/// A household power-consumption file in the UCI layout: semicolon-separated,
/// date/time first, seven numeric columns, sprinkled `?` missing rows.
/// Columns are physically coupled (intensity tracks active power, voltage
/// sags under load, sub-meters carry the appliance bursts), and the
/// appliances switch on and off in stretches, so most minutes sit at base
/// load and a minority spike — the above-median-load task is learnable but
/// noisy near the median.
pub fn power_standin_csv(rows: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::with_capacity(rows * 64);
    s.push_str(
        "Date;Time;Global_active_power;Global_reactive_power;Voltage;Global_intensity;\
         Sub_metering_1;Sub_metering_2;Sub_metering_3\n",
    );
    let mut day = 16u32;
    let mut month = 12u32;
    let mut year = 2006u32;
    let mut kitchen = Appliance::new();
    let mut laundry = Appliance::new();
    let mut heater = Appliance::new();
    for i in 0..rows {
        if i > 0 && i % 1440 == 0 {
            day += 1;
            if day > 28 {
                day = 1;
                month += 1;
                if month > 12 {
                    month = 1;
                    year += 1;
                }
            }
        }
        let hour = ((i % 1440) as f64) / 60.0;
        let minute = (i % 60) as u32;
        // cooking clusters around meals, laundry in the daytime, the water
        // heater at night and early morning
        let cook_p = if (6.5..9.5).contains(&hour) {
            0.015
        } else if (18.0..21.5).contains(&hour) {
            0.025
        } else {
            0.002
        };
        let laundry_p = if (8.0..22.0).contains(&hour) { 0.004 } else { 0.0005 };
        let heat_p = if !(7.0..21.0).contains(&hour) { 0.012 } else { 0.002 };
        let k_kw = kitchen.step(&mut rng, cook_p, 8..45, 0.8..2.4);
        let l_kw = laundry.step(&mut rng, laundry_p, 25..90, 0.3..2.2);
        let h_kw = heater.step(&mut rng, heat_p, 10..35, 0.9..1.6);
        // base load: fridge plus evening lighting
        let base = 0.18 + 0.10 * (-(hour - 20.0f64).powi(2) / 40.0).exp();
        let mut active = base + k_kw + l_kw + h_kw + rng.gen_range(-0.03..0.05);
        if rng.gen_bool(0.003) {
            active += rng.gen_range(2.0..4.0); // rare everything-at-once surge
        }
        let active = active.max(0.076);
        let intensity = active * 1000.0 / 230.0 + rng.gen_range(-0.15..0.15);
        let voltage = 241.0 - 1.4 * active + rng.gen_range(-1.5..1.5);
        let reactive = (0.05 + 0.05 * active * rng.gen_range(0.2..1.0)).max(0.0);
        // Wh within the minute, one sub-meter per appliance circuit
        let s1 = if k_kw > 0.0 { k_kw * 1000.0 / 60.0 + rng.gen_range(-0.5..0.5) } else { 0.0 };
        let s2 = if l_kw > 0.0 { l_kw * 1000.0 / 60.0 + rng.gen_range(-0.5..0.5) } else { 0.0 };
        let s3 = if h_kw > 0.0 { h_kw * 1000.0 / 60.0 + rng.gen_range(-0.5..0.5) } else { 0.0 };
        let stamp = format!("{day}/{month}/{year};{:02}:{minute:02}:00", hour as u32);
        if rng.gen_bool(0.02) {
            // the real file has whole rows of '?' where the meter dropped out
            s.push_str(&format!("{stamp};?;?;?;?;?;?;?\n"));
        } else {
            s.push_str(&format!(
                "{stamp};{active:.3};{reactive:.3};{voltage:.2};{intensity:.1};{:.1};{:.1};{:.1}\n",
                s1.max(0.0),
                s2.max(0.0),
                s3.max(0.0)
            ));
        }
    }
    s
}

pub fn write_power_standin(path: &Path, rows: usize, seed: u64) {
    std::fs::write(path, power_standin_csv(rows, seed)).expect("write power stand-in");
}

/// Digit images in the IDX layout: each class is a Gaussian blob at a fixed
/// position on a ring (plus a satellite blob for odd digits), with jitter,
/// intensity variation, and pixel noise. Neighbouring classes overlap, so a
/// linear one-vs-rest classifier is good but not perfect.
pub fn blob_digits(n: usize, seed: u64) -> MnistData {
    let (rows, cols) = (28usize, 28usize);
    let d = rows * cols;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = vec![0.0f64; n * d];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % 10) as u8;
        labels.push(class);
        let theta = std::f64::consts::TAU * class as f64 / 10.0;
        let cx = 14.0 + 5.8 * theta.cos() + rng.gen_range(-1.6..1.6);
        let cy = 14.0 + 5.8 * theta.sin() + rng.gen_range(-1.6..1.6);
        let sigma = 2.9 + 0.15 * (class % 3) as f64;
        let peak = rng.gen_range(0.85..1.0);
        // odd digits get a dimmer companion blob opposite the center
        let satellite = class % 2 == 1;
        let sx = 14.0 - (cx - 14.0) * 0.5;
        let sy = 14.0 - (cy - 14.0) * 0.5;
        let img = &mut images[i * d..(i + 1) * d];
        for r in 0..rows {
            for c in 0..cols {
                let dist2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                let mut v = peak * (-dist2 / (2.0 * sigma * sigma)).exp();
                if satellite {
                    let sd2 = (r as f64 - sy).powi(2) + (c as f64 - sx).powi(2);
                    v += 0.35 * peak * (-sd2 / (2.0 * 1.8f64 * 1.8)).exp();
                }
                v += rng.gen_range(-0.08..0.08);
                img[r * cols + c] = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
            }
        }
    }
    MnistData { images: Arc::from(images.into_boxed_slice()), labels, n, rows, cols }
}
