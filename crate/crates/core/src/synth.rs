//! Synthetic paired data: rendered ground-truth scenes, their mosaiced
//! raw frames, and simulated short exposures with sensor noise. Stands in
//! for real capture sets at desk scale; anything real can be supplied in
//! the same MCNT + manifest form.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::raw::{write_raw_frame, Cfa, RawFrame};
use crate::tensor::io::{save_tensor, write_mcnt, McntPayload};
use crate::tensor::{Scalar, Tensor};

/// Sensor levels and noise magnitudes, in digital numbers (DN).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    pub black_level: u16,
    pub white_level: u16,
    /// Shot noise variance per DN of signal (Poisson approximation).
    pub shot_noise_dn: f64,
    /// Gaussian read noise sigma in DN.
    pub read_noise_dn: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        // 14-bit range with a conventional black offset.
        SensorModel {
            black_level: 512,
            white_level: 16383,
            shot_noise_dn: 4.0,
            read_noise_dn: 2.0,
        }
    }
}

impl SensorModel {
    pub fn span(&self) -> f64 {
        (self.white_level - self.black_level) as f64
    }

    /// Snap a [0,1] value onto the sensor's representable grid so that
    /// mosaicing and normalizing round-trip exactly.
    pub fn snap(&self, x: f64) -> f64 {
        (x.clamp(0.0, 1.0) * self.span()).round() / self.span()
    }
}

/// One generated training pair.
pub struct ScenePair<T: Scalar = f32> {
    pub ground_truth: Tensor<T>,
    pub raw_short: RawFrame,
    pub scene_id: String,
    pub seed: u64,
}

/// Deterministic scene seed for one index of a generation run.
pub fn scene_seed(dataset_seed: u64, index: u64) -> u64 {
    splitmix(dataset_seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Render a deterministic RGB test scene in [0,1]: smooth gradients,
/// random rectangles and disks, and a few near-saturated highlight spots
/// so the bright-region amplification path always gets exercised.
pub fn generate_scene<T: Scalar>(seed: u64, size: usize) -> Result<Tensor<T>> {
    if size % 4 != 0 || size == 0 {
        return Err(Error::Dimension(format!(
            "scene size {size} must be a positive multiple of 4"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = vec![0.0f64; 3 * size * size];
    let s = size as f64;

    // Smooth base gradient per channel, kept dim like a low-light exposure.
    for c in 0..3 {
        let gx: f64 = rng.random_range(-0.25..0.25);
        let gy: f64 = rng.random_range(-0.25..0.25);
        let base: f64 = rng.random_range(0.1..0.4);
        for y in 0..size {
            for x in 0..size {
                img[(c * size + y) * size + x] =
                    (base + gx * (x as f64 / s - 0.5) + gy * (y as f64 / s - 0.5)).clamp(0.0, 1.0);
            }
        }
    }

    let blend = |cx: f64, cy: f64, color: [f64; 3], alpha: f64, img: &mut [f64], hit: &dyn Fn(f64, f64) -> bool| {
        let _ = (cx, cy);
        for y in 0..size {
            for x in 0..size {
                if hit(x as f64, y as f64) {
                    for (c, col) in color.iter().enumerate() {
                        let i = (c * size + y) * size + x;
                        img[i] = ((1.0 - alpha) * img[i] + alpha * col).clamp(0.0, 1.0);
                    }
                }
            }
        }
    };

    // Shape counts scale with the image so edge density stays roughly
    // constant per area: desk-scale crops stay learnable, large scenes
    // stay varied.
    let rects = (size / 32).clamp(1, 24);
    for _ in 0..rects {
        let x0: f64 = rng.random_range(0.0..s * 0.8);
        let y0: f64 = rng.random_range(0.0..s * 0.8);
        let w: f64 = rng.random_range(s * 0.1..s * 0.4);
        let h: f64 = rng.random_range(s * 0.1..s * 0.4);
        let color = [
            rng.random_range(0.0..0.8),
            rng.random_range(0.0..0.8),
            rng.random_range(0.0..0.8),
        ];
        let alpha: f64 = rng.random_range(0.4..0.8);
        blend(x0, y0, color, alpha, &mut img, &move |x, y| {
            x >= x0 && x < x0 + w && y >= y0 && y < y0 + h
        });
    }

    let disks = (size / 48).clamp(1, 16);
    for _ in 0..disks {
        let cx: f64 = rng.random_range(0.0..s);
        let cy: f64 = rng.random_range(0.0..s);
        let radius: f64 = rng.random_range(s * 0.06..s * 0.2);
        let color = [
            rng.random_range(0.0..0.8),
            rng.random_range(0.0..0.8),
            rng.random_range(0.0..0.8),
        ];
        let alpha: f64 = rng.random_range(0.4..0.8);
        blend(cx, cy, color, alpha, &mut img, &move |x, y| {
            (x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius
        });
    }

    // Highlight spots near saturation (HDR regime). At least one is forced
    // fully saturated.
    let spots = (size / 64).clamp(1, 4);
    for k in 0..spots {
        let cx: f64 = rng.random_range(s * 0.1..s * 0.9);
        let cy: f64 = rng.random_range(s * 0.1..s * 0.9);
        let radius: f64 = rng.random_range(s * 0.04..s * 0.09);
        let level = if k == 0 {
            1.0
        } else {
            rng.random_range(0.96..1.0)
        };
        blend(cx, cy, [level; 3], 1.0, &mut img, &move |x, y| {
            (x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius
        });
    }

    // Optical low-pass: a binomial blur stands in for the lens PSF so the
    // scene has no unphysical single-pixel step edges.
    let img = binomial_blur3(&img, size);
    let img = binomial_blur3(&img, size);
    let data: Vec<T> = img.into_iter().map(T::from_f64).collect();
    Tensor::from_vec(&[3, size, size], data)
}

fn binomial_blur3(img: &[f64], size: usize) -> Vec<f64> {
    let mut tmp = vec![0.0f64; img.len()];
    let mut out = vec![0.0f64; img.len()];
    let at = |v: &[f64], c: usize, y: isize, x: isize| {
        let y = y.clamp(0, size as isize - 1) as usize;
        let x = x.clamp(0, size as isize - 1) as usize;
        v[(c * size + y) * size + x]
    };
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let xi = x as isize;
                tmp[(c * size + y) * size + x] = 0.25
                    * (at(img, c, y as isize, xi - 1)
                        + 2.0 * at(img, c, y as isize, xi)
                        + at(img, c, y as isize, xi + 1));
            }
        }
        for y in 0..size {
            for x in 0..size {
                let yi = y as isize;
                out[(c * size + y) * size + x] = 0.25
                    * (at(&tmp, c, yi - 1, x as isize)
                        + 2.0 * at(&tmp, c, yi, x as isize)
                        + at(&tmp, c, yi + 1, x as isize));
            }
        }
    }
    out
}

/// Sample each CFA site's color channel from an RGB image and map [0,1]
/// back into sensor units: `v = black + x * (white - black)`, rounded.
/// The result is a noiseless frame at unit exposure.
pub fn mosaic<T: Scalar>(rgb: &Tensor<T>, cfa: &Cfa, sensor: &SensorModel) -> Result<RawFrame> {
    let [c, h, w] = match rgb.shape() {
        [c, h, w] => [*c, *h, *w],
        other => {
            return Err(Error::Dimension(format!(
                "mosaic expects (3,H,W), got {other:?}"
            )))
        }
    };
    if c != 3 {
        return Err(Error::Dimension(format!("mosaic expects 3 channels, got {c}")));
    }
    let p = cfa.period();
    if h % p != 0 || w % p != 0 {
        return Err(Error::Dimension(format!(
            "mosaic dims {h}x{w} not divisible by CFA period {p}"
        )));
    }
    let d = rgb.data();
    let span = sensor.span();
    let black = sensor.black_level as f64;
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let ch = cfa.color_at(y, x).channel();
            let v = Scalar::to_f64(d[(ch * h + y) * w + x]).clamp(0.0, 1.0);
            out.push((black + v * span).round() as u16);
        }
    }
    drop(d);
    RawFrame::new(
        out,
        h,
        w,
        cfa.clone(),
        sensor.black_level,
        sensor.white_level,
        1.0,
    )
}

/// Divide the signal by `ratio` and add shot plus read noise, quantized to
/// sensor integers and clamped to [black, white]. Records the ratio as the
/// frame's amplification target.
pub fn simulate_short_exposure(
    raw: &RawFrame,
    ratio: f64,
    sensor: &SensorModel,
    rng: &mut ChaCha8Rng,
) -> Result<RawFrame> {
    if ratio < 1.0 {
        return Err(Error::Parameter(format!("ratio {ratio} must be >= 1")));
    }
    let black = sensor.black_level as f64;
    let data: Vec<u16> = raw
        .data
        .iter()
        .map(|&v| {
            let signal = (v as f64 - black).max(0.0) / ratio;
            let var = sensor.shot_noise_dn * signal + sensor.read_noise_dn * sensor.read_noise_dn;
            let noise = if var > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                z * var.sqrt()
            } else {
                0.0
            };
            (black + signal + noise)
                .round()
                .clamp(sensor.black_level as f64, sensor.white_level as f64) as u16
        })
        .collect();
    RawFrame::new(
        data,
        raw.height,
        raw.width,
        raw.cfa.clone(),
        sensor.black_level,
        sensor.white_level,
        ratio,
    )
}

/// One line of a dataset manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub input: PathBuf,
    pub meta: PathBuf,
    pub target: PathBuf,
    pub ratio: f64,
}

/// Parsed and validated dataset manifest.
#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

/// Parse a manifest of `input;meta;target;ratio` lines. Paths are resolved
/// relative to the manifest location and must exist.
pub fn load_dataset(manifest_path: &Path) -> Result<DatasetManifest> {
    if !manifest_path.exists() {
        return Err(Error::MissingFile(manifest_path.to_path_buf()));
    }
    let origin = manifest_path.display().to_string();
    let contents =
        std::fs::read_to_string(manifest_path).map_err(|e| Error::io(origin.clone(), e))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (lineno, line) in contents.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(';').collect();
        let [input, meta, target, ratio] = match fields.as_slice() {
            [a, b, c, d] => [*a, *b, *c, *d],
            _ => {
                return Err(Error::format(
                    &origin,
                    format!(
                        "line {}: expected 'input;meta;target;ratio', got '{line}'",
                        lineno + 1
                    ),
                ))
            }
        };
        let ratio: f64 = ratio.trim().parse().map_err(|_| {
            Error::format(
                &origin,
                format!("line {}: ratio '{ratio}' is not a number", lineno + 1),
            )
        })?;
        if ratio < 1.0 {
            return Err(Error::Parameter(format!(
                "{origin}: line {}: ratio {ratio} must be >= 1",
                lineno + 1
            )));
        }
        let entry = ManifestEntry {
            input: base.join(input.trim()),
            meta: base.join(meta.trim()),
            target: base.join(target.trim()),
            ratio,
        };
        for p in [&entry.input, &entry.meta, &entry.target] {
            if !p.exists() {
                return Err(Error::MissingFile(p.clone()));
            }
        }
        entries.push(entry);
    }
    Ok(DatasetManifest { entries })
}

/// The exposure ratios short frames are drawn from.
pub const DEFAULT_RATIOS: [f64; 3] = [100.0, 250.0, 300.0];

/// Generate `scenes` paired samples under `out_dir` and write the manifest.
/// Byte-identical across runs with the same arguments.
pub fn build_dataset(
    out_dir: &Path,
    scenes: usize,
    size: usize,
    seed: u64,
    cfa: &Cfa,
    sensor: &SensorModel,
    ratios: &[f64],
) -> Result<PathBuf> {
    if ratios.is_empty() {
        return Err(Error::Parameter("ratio set must not be empty".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut manifest = String::new();
    for i in 0..scenes {
        let sseed = scene_seed(seed, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(sseed));
        let scene: Tensor<f64> = generate_scene(sseed, size)?;
        // Snap the target to sensor-representable values so the noiseless
        // inverse is exact at every sampled site.
        let snapped: Vec<f64> = scene.data().iter().map(|&v| sensor.snap(v)).collect();
        let gt = Tensor::from_vec(scene.shape(), snapped)?;
        let ratio = ratios[rng.random_range(0..ratios.len())];
        let noiseless = mosaic(&gt, cfa, sensor)?;
        let short = simulate_short_exposure(&noiseless, ratio, sensor, &mut rng)?;

        let id = format!("scene_{i:03}");
        let input = out_dir.join(format!("{id}.raw.mcnt"));
        let meta = out_dir.join(format!("{id}.raw.meta"));
        let target = out_dir.join(format!("{id}.target.mcnt"));
        write_raw_frame(&input, &meta, &short)?;
        save_tensor(&target, &gt)?;
        manifest.push_str(&format!(
            "{id}.raw.mcnt;{id}.raw.meta;{id}.target.mcnt;{ratio}\n"
        ));
    }
    let manifest_path = out_dir.join("manifest.txt");
    std::fs::write(&manifest_path, manifest)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    Ok(manifest_path)
}

/// Write an 8-bit P6 preview of a (3,H,W) or (1,3,H,W) tensor, display
/// gamma 1/2.2. Preview only; quantitative outputs stay linear MCNT.
pub fn write_ppm_preview<T: Scalar>(path: &Path, rgb: &Tensor<T>) -> Result<()> {
    let (h, w, plane) = match rgb.shape() {
        [3, h, w] => (*h, *w, *h * *w),
        [1, 3, h, w] => (*h, *w, *h * *w),
        other => {
            return Err(Error::Dimension(format!(
                "preview expects (3,H,W) or (1,3,H,W), got {other:?}"
            )))
        }
    };
    let d = rgb.data();
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = Scalar::to_f64(d[c * plane + y * w + x]).clamp(0.0, 1.0);
                bytes.push((v.powf(1.0 / 2.2) * 255.0).round() as u8);
            }
        }
    }
    drop(d);
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Convenience for tests and the CLI: MCNT f32 target image writer.
pub fn save_target(path: &Path, rgb: &Tensor<f32>) -> Result<()> {
    let data: Vec<f32> = rgb.to_vec();
    write_mcnt(path, rgb.shape(), &McntPayload::F32(data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raw::{normalize_black_level, pack_bayer, unpack_bayer};

    #[test]
    fn scenes_are_bounded_deterministic_and_distinct() {
        let a: Tensor<f64> = generate_scene(1, 64).unwrap();
        assert_eq!(a.shape(), &[3, 64, 64]);
        assert!(a.to_vec().iter().all(|&v| (0.0..=1.0).contains(&v)));

        let a2: Tensor<f64> = generate_scene(1, 64).unwrap();
        assert_eq!(a.to_vec(), a2.to_vec());

        let b: Tensor<f64> = generate_scene(2, 64).unwrap();
        let differing = a
            .to_vec()
            .iter()
            .zip(b.to_vec())
            .filter(|(&x, y)| (x - y).abs() > 1e-9)
            .count();
        assert!(
            differing > a.numel() / 100,
            "only {differing} of {} pixels differ",
            a.numel()
        );
    }

    #[test]
    fn scenes_contain_a_highlight_region() {
        for seed in 0..8 {
            let img: Tensor<f64> = generate_scene(seed, 64).unwrap();
            let bright = img.to_vec().iter().filter(|&&v| v > 0.95).count();
            assert!(bright >= 1, "seed {seed} rendered no highlight");
        }
    }

    #[test]
    fn mosaic_constant_gray_normalizes_back() {
        let sensor = SensorModel::default();
        let c = sensor.snap(0.35);
        let rgb = Tensor::full(&[3, 8, 8], c);
        let frame = mosaic(&rgb, &Cfa::bayer_rggb(), &sensor).unwrap();
        let norm: Tensor<f64> = normalize_black_level(&frame);
        assert!(norm.to_vec().iter().all(|&v| v == c));
    }

    #[test]
    fn mosaic_roundtrips_exactly_at_sampled_sites() {
        let sensor = SensorModel::default();
        let scene: Tensor<f64> = generate_scene(7, 32).unwrap();
        let snapped: Vec<f64> = scene.data().iter().map(|&v| sensor.snap(v)).collect();
        let gt = Tensor::from_vec(&[3, 32, 32], snapped).unwrap();
        let cfa = Cfa::bayer_rggb();
        let frame = mosaic(&gt, &cfa, &sensor).unwrap();
        let norm: Tensor<f64> = normalize_black_level(&frame);
        let gtd = gt.to_vec();
        for y in 0..32 {
            for x in 0..32 {
                let ch = cfa.color_at(y, x).channel();
                let expect = gtd[(ch * 32 + y) * 32 + x];
                let got = norm.to_vec()[y * 32 + x];
                assert_eq!(got, expect, "site ({y},{x})");
            }
        }
    }

    #[test]
    fn packed_channel_means_match_site_means() {
        let sensor = SensorModel::default();
        let scene: Tensor<f64> = generate_scene(9, 16).unwrap();
        let snapped: Vec<f64> = scene.data().iter().map(|&v| sensor.snap(v)).collect();
        let gt = Tensor::from_vec(&[3, 16, 16], snapped).unwrap();
        let cfa = Cfa::bayer_rggb();
        let frame = mosaic(&gt, &cfa, &sensor).unwrap();
        let norm: Tensor<f64> = normalize_black_level(&frame);
        let packed = pack_bayer(&norm, &cfa).unwrap();

        // Oracle: mean of the ground truth at each channel's own sites.
        let gtd = gt.to_vec();
        let mut site_sums = [0.0f64; 4];
        let mut site_counts = [0usize; 4];
        for y in 0..16 {
            for x in 0..16 {
                let slot = match (y % 2, x % 2) {
                    (0, 0) => 0, // R
                    (0, 1) => 1, // G1
                    (1, 0) => 2, // G2
                    _ => 3,      // B
                };
                let ch = cfa.color_at(y, x).channel();
                site_sums[slot] += gtd[(ch * 16 + y) * 16 + x];
                site_counts[slot] += 1;
            }
        }
        let pd = packed.to_vec();
        for c in 0..4 {
            let mean: f64 = pd[c * 64..(c + 1) * 64].iter().sum::<f64>() / 64.0;
            let expect = site_sums[c] / site_counts[c] as f64;
            assert!((mean - expect).abs() < 1e-12, "channel {c}");
        }
        // And unpacking restores the mosaic bit-exactly.
        let back = unpack_bayer(&packed, &cfa).unwrap();
        assert_eq!(back.to_vec(), norm.to_vec());
    }

    #[test]
    fn noiseless_short_exposure_divides_exactly_up_to_quantization() {
        let sensor = SensorModel {
            shot_noise_dn: 0.0,
            read_noise_dn: 0.0,
            ..SensorModel::default()
        };
        let scene: Tensor<f64> = generate_scene(11, 16).unwrap();
        let gt = Tensor::from_vec(
            &[3, 16, 16],
            scene.data().iter().map(|&v| sensor.snap(v)).collect(),
        )
        .unwrap();
        let frame = mosaic(&gt, &Cfa::bayer_rggb(), &sensor).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ratio = 100.0;
        let short = simulate_short_exposure(&frame, ratio, &sensor, &mut rng).unwrap();
        assert_eq!(short.exposure_ratio, ratio);
        let norm_in: Tensor<f64> = normalize_black_level(&frame);
        let norm_out: Tensor<f64> = normalize_black_level(&short);
        let quant = 1.0 / sensor.span();
        for (&o, &i) in norm_out.to_vec().iter().zip(norm_in.to_vec().iter()) {
            assert!((o - i / ratio).abs() <= 0.5 * quant + 1e-12);
            // Amplifying the short frame back recovers the original within
            // one (amplified) quantization step.
            assert!((o * ratio - i).abs() <= 0.5 * quant * ratio + 1e-9);
        }
    }

    #[test]
    fn noise_variance_matches_the_configured_model() {
        let sensor = SensorModel::default();
        // Constant patch with 1000 DN of post-division signal, one million
        // samples at unit ratio.
        let signal_dn = 1000.0;
        let v = (sensor.black_level as f64 + signal_dn) as u16;
        let n = 1000;
        let frame = RawFrame::new(
            vec![v; n * n],
            n,
            n,
            Cfa::bayer_rggb(),
            sensor.black_level,
            sensor.white_level,
            1.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let short = simulate_short_exposure(&frame, 1.0, &sensor, &mut rng).unwrap();
        let vals: Vec<f64> = short.data.iter().map(|&x| x as f64).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / vals.len() as f64;
        // Model variance plus 1/12 from rounding to integers.
        let expect = sensor.shot_noise_dn * signal_dn
            + sensor.read_noise_dn * sensor.read_noise_dn
            + 1.0 / 12.0;
        let rel = (var - expect).abs() / expect;
        assert!(rel < 0.10, "variance {var} vs model {expect} (rel {rel})");
    }

    #[test]
    fn manifest_parsing_and_errors() {
        let dir = std::env::temp_dir().join(format!("synth-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();

        let manifest = build_dataset(
            &dir.join("set"),
            3,
            32,
            7,
            &Cfa::bayer_rggb(),
            &SensorModel::default(),
            &DEFAULT_RATIOS,
        )
        .unwrap();
        let parsed = load_dataset(&manifest).unwrap();
        assert_eq!(parsed.entries.len(), 3);
        assert!(parsed.entries.iter().all(|e| e.ratio >= 100.0));

        // Ratio parses as a float.
        let line = std::fs::read_to_string(&manifest).unwrap();
        let first_ratio = line.lines().next().unwrap().split(';').nth(3).unwrap();
        let _: f64 = first_ratio.parse().unwrap();

        // Missing target file.
        let broken = dir.join("broken.txt");
        std::fs::write(&broken, "a.mcnt;a.meta;missing.mcnt;300\n").unwrap();
        std::fs::write(dir.join("a.mcnt"), b"x").unwrap();
        std::fs::write(dir.join("a.meta"), b"x").unwrap();
        match load_dataset(&broken) {
            Err(Error::MissingFile(p)) => assert!(p.ends_with("missing.mcnt")),
            other => panic!("expected MissingFile, got {other:?}"),
        }

        // Malformed line.
        let malformed = dir.join("malformed.txt");
        std::fs::write(&malformed, "only;three;fields\n").unwrap();
        assert!(matches!(
            load_dataset(&malformed),
            Err(Error::Format { .. })
        ));

        // Ratio below one.
        let low = dir.join("low.txt");
        std::fs::write(&low, "a.mcnt;a.meta;a.mcnt;0.5\n").unwrap();
        assert!(matches!(load_dataset(&low), Err(Error::Parameter(_))));

        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn dataset_regeneration_is_byte_identical() {
        let base = std::env::temp_dir().join(format!("synth-det-{}", std::process::id()));
        let a = base.join("a");
        let b = base.join("b");
        for dir in [&a, &b] {
            build_dataset(
                dir,
                2,
                32,
                123,
                &Cfa::bayer_rggb(),
                &SensorModel::default(),
                &DEFAULT_RATIOS,
            )
            .unwrap();
        }
        for name in [
            "manifest.txt",
            "scene_000.raw.mcnt",
            "scene_000.raw.meta",
            "scene_000.target.mcnt",
            "scene_001.raw.mcnt",
        ] {
            let fa = std::fs::read(a.join(name)).unwrap();
            let fb = std::fs::read(b.join(name)).unwrap();
            assert_eq!(fa, fb, "{name} differs between identical runs");
        }
        std::fs::remove_dir_all(&base).ok();
    }
}
