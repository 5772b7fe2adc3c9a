//! Deterministic inputs shared by the benchmarks.

use headgen::audio::AudioClip;
use headgen::{Frame, HeadParams};

pub fn tone(seconds: f64, sample_rate: u32) -> AudioClip {
    let n = (seconds * sample_rate as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            0.3 * (std::f64::consts::TAU * 440.0 * t).sin()
                + 0.1 * (std::f64::consts::TAU * 1250.0 * t).sin()
        })
        .collect();
    AudioClip::new(samples, sample_rate).expect("valid clip")
}

pub fn card(size: usize) -> Frame {
    Frame::from_fn(size, size, |y, x| {
        let v = ((x * 13 + y * 7) % 29) as f64 / 28.0;
        [v, 1.0 - v, 0.5]
    })
    .expect("valid frame")
}

pub fn tilted() -> HeadParams {
    let mut p = HeadParams::identity();
    p.crop = [0.1, -0.05, 1.1];
    p.pose[0] = 0.2;
    p
}
