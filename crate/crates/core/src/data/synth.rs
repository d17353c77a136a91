//! Procedural stand-in for a photo-stream dataset. Each class is a family
//! of oriented sinusoidal textures with its own palette, frequency and
//! orientation; an event fixes one random member of the family and its
//! images are small perturbations of it, like consecutive frames.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng as _;

use super::image::save_image;
use super::manifest::{DatasetManifest, EventRecord, Split};
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};
use crate::tensor::Tensor;

/// Class names of the EgoFoodPlaces release, used for the first 22
/// synthetic classes.
pub const FOOD_PLACE_CLASSES: [&str; 22] = [
    "bakery_shop",
    "banquet_hall",
    "bar",
    "beer_hall",
    "butchers_shop",
    "cafeteria",
    "candy_store",
    "coffee_shop",
    "delicatessen",
    "dining_room",
    "fastfood_restaurant",
    "food_court",
    "ice_cream_parlor",
    "kitchen",
    "market_indoor",
    "market_outdoor",
    "picnic_area",
    "pizzeria",
    "pub_indoor",
    "restaurant",
    "supermarket",
    "sushi_bar",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub events_per_class: usize,
    /// Inclusive range of images per event.
    pub images_per_event: (usize, usize),
    /// `(height, width)`.
    pub image_size: (usize, usize),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 4,
            events_per_class: 7,
            images_per_event: (4, 4),
            image_size: (64, 64),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.images_per_event;
        let (h, w) = self.image_size;
        if self.num_classes == 0 || self.events_per_class == 0 || lo == 0 || hi < lo || h == 0 || w == 0 {
            return Err(Error::config(format!(
                "synthetic dataset counts must be positive and ordered: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn class_name(&self, class: usize) -> String {
        FOOD_PLACE_CLASSES
            .get(class)
            .map_or_else(|| format!("place_{class:02}"), |s| s.to_string())
    }
}

struct Texture {
    low: [f64; 3],
    high: [f64; 3],
    frequency: f64,
    orientation: f64,
    phase: f64,
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match i as i64 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn class_texture(class: usize, classes: usize) -> Texture {
    let hue = class as f64 / classes as f64;
    Texture {
        low: hsv(hue, 0.6, 0.35),
        high: hsv(hue, 0.5, 0.9),
        frequency: 2.0 + (class % 4) as f64 * 1.5,
        orientation: PI * class as f64 / classes as f64,
        phase: 0.0,
    }
}

fn jitter(rng: &mut Rng, amount: f64) -> f64 {
    rng.random_range(-amount..=amount)
}

fn event_texture(base: &Texture, rng: &mut Rng) -> Texture {
    let tint = |c: [f64; 3], rng: &mut Rng| c.map(|v| (v + jitter(rng, 0.04)).clamp(0.0, 1.0));
    Texture {
        low: tint(base.low, rng),
        high: tint(base.high, rng),
        frequency: base.frequency * (1.0 + jitter(rng, 0.1)),
        orientation: base.orientation + jitter(rng, 0.1),
        phase: rng.random_range(0.0..2.0 * PI),
    }
}

fn render(t: &Texture, (h, w): (usize, usize), rng: &mut Rng) -> Tensor<f32> {
    let phase = t.phase + jitter(rng, 0.3);
    let (sin, cos) = t.orientation.sin_cos();
    let plane = h * w;
    let mut data = vec![0.0f32; 3 * plane];
    for y in 0..h {
        for x in 0..w {
            let u = (x as f64 * cos + y as f64 * sin) / w.max(h) as f64;
            let mix = 0.5 * (1.0 + (2.0 * PI * t.frequency * u + phase).sin());
            for c in 0..3 {
                let v = t.low[c] + (t.high[c] - t.low[c]) * mix + jitter(rng, 0.03);
                data[c * plane + y * w + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("extent")
}

/// Writes `images/<class>/<event>_<i>.ppm` under `out_dir` and returns the
/// (unsplit) manifest rooted there. Deterministic in `config`.
pub fn generate_synthetic_dataset(config: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let class_names: Vec<String> = (0..config.num_classes).map(|c| config.class_name(c)).collect();
    let mut events = Vec::new();
    for (class, name) in class_names.iter().enumerate() {
        let family = class_texture(class, config.num_classes);
        std::fs::create_dir_all(out_dir.join("images").join(name))?;
        for e in 0..config.events_per_class {
            let mut rng = stream(&[config.seed, class as u64, e as u64]);
            let texture = event_texture(&family, &mut rng);
            let (lo, hi) = config.images_per_event;
            let count = rng.random_range(lo..=hi);
            let event_id = format!("{name}-e{e:02}");
            let mut image_refs = Vec::with_capacity(count);
            for i in 0..count {
                let rel = PathBuf::from("images").join(name).join(format!("{event_id}_{i:02}.ppm"));
                save_image(out_dir.join(&rel), &render(&texture, config.image_size, &mut rng))?;
                image_refs.push(rel);
            }
            events.push(EventRecord {
                event_id,
                class_index: class,
                image_refs,
                split: Split::Unassigned,
            });
        }
    }
    DatasetManifest::new(out_dir, class_names, events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let cfg = SynthConfig {
            events_per_class: 5,
            image_size: (16, 16),
            seed: 3,
            ..Default::default()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = generate_synthetic_dataset(&cfg, a.path()).unwrap();
        let mb = generate_synthetic_dataset(&cfg, b.path()).unwrap();
        assert_eq!(ma.num_images(), 80);
        assert_eq!(ma.events.len(), 20);
        assert_eq!(ma.events, mb.events);
        let rel = &ma.events[7].image_refs[2];
        assert_eq!(
            std::fs::read(a.path().join(rel)).unwrap(),
            std::fs::read(b.path().join(rel)).unwrap()
        );
    }

    #[test]
    fn image_count_range_is_respected() {
        let cfg = SynthConfig {
            images_per_event: (2, 5),
            image_size: (8, 8),
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic_dataset(&cfg, dir.path()).unwrap();
        assert!(m.events.iter().all(|e| (2..=5).contains(&e.len())));
    }

    #[test]
    fn names_beyond_the_release_list() {
        let cfg = SynthConfig {
            num_classes: 24,
            ..Default::default()
        };
        assert_eq!(cfg.class_name(0), "bakery_shop");
        assert_eq!(cfg.class_name(23), "place_23");
    }
}
