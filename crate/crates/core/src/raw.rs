//! Sensor mosaic handling: black-level normalization, nonlinear raw
//! amplification (RIMEF) and CFA channel packing.
//!
//! The pipeline order is normalize -> amplify -> pack; amplification acts
//! on the full-resolution mosaic and its output is clamped to [0, 1] so
//! network inputs stay bounded.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::io::{read_mcnt, write_mcnt, McntPayload};
use crate::tensor::{Scalar, Tensor};

/// One site color of a color filter array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfaColor {
    R,
    G,
    B,
}

impl CfaColor {
    fn from_char(c: char) -> Result<Self> {
        match c {
            'R' | 'r' => Ok(CfaColor::R),
            'G' | 'g' => Ok(CfaColor::G),
            'B' | 'b' => Ok(CfaColor::B),
            other => Err(Error::Parameter(format!("unknown CFA color '{other}'"))),
        }
    }

    fn to_char(self) -> char {
        match self {
            CfaColor::R => 'R',
            CfaColor::G => 'G',
            CfaColor::B => 'B',
        }
    }

    /// Index into an RGB pixel.
    pub fn channel(self) -> usize {
        match self {
            CfaColor::R => 0,
            CfaColor::G => 1,
            CfaColor::B => 2,
        }
    }
}

/// Color filter array descriptor: a 2x2 Bayer map or a 6x6 X-Trans map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Cfa {
    Bayer([[CfaColor; 2]; 2]),
    XTrans([[CfaColor; 6]; 6]),
}

impl Cfa {
    /// The common RGGB Bayer layout.
    pub fn bayer_rggb() -> Self {
        use CfaColor::*;
        Cfa::Bayer([[R, G], [G, B]])
    }

    pub fn bayer_from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != 4 {
            return Err(Error::Parameter(format!(
                "Bayer pattern must have 4 letters, got '{s}'"
            )));
        }
        let mut map = [[CfaColor::R; 2]; 2];
        for (i, c) in chars.iter().enumerate() {
            map[i / 2][i % 2] = CfaColor::from_char(*c)?;
        }
        let cfa = Cfa::Bayer(map);
        cfa.validate()?;
        Ok(cfa)
    }

    /// The standard X-Trans layout found on Fujifilm sensors.
    pub fn xtrans_default() -> Self {
        Self::xtrans_from_str("GGRGGB,GGBGGR,BRGRBG,GGBGGR,GGRGGB,RBGBRG")
            .expect("builtin pattern is valid")
    }

    pub fn xtrans_from_str(s: &str) -> Result<Self> {
        let rows: Vec<&str> = s.split(',').collect();
        if rows.len() != 6 || rows.iter().any(|r| r.chars().count() != 6) {
            return Err(Error::Parameter(format!(
                "X-Trans pattern must be 6 comma-separated rows of 6 letters, got '{s}'"
            )));
        }
        let mut map = [[CfaColor::R; 6]; 6];
        for (y, row) in rows.iter().enumerate() {
            for (x, c) in row.chars().enumerate() {
                map[y][x] = CfaColor::from_char(c)?;
            }
        }
        Ok(Cfa::XTrans(map))
    }

    fn validate(&self) -> Result<()> {
        if let Cfa::Bayer(map) = self {
            let mut counts = [0usize; 3];
            for row in map {
                for c in row {
                    counts[c.channel()] += 1;
                }
            }
            if counts != [1, 2, 1] {
                return Err(Error::Parameter(
                    "Bayer pattern must contain one R, two G and one B site".into(),
                ));
            }
        }
        Ok(())
    }

    /// Spatial period of the pattern: 2 for Bayer, 6 for X-Trans.
    pub fn period(&self) -> usize {
        match self {
            Cfa::Bayer(_) => 2,
            Cfa::XTrans(_) => 6,
        }
    }

    /// Channel count after packing: 4 for Bayer, 9 for X-Trans.
    pub fn packed_channels(&self) -> usize {
        match self {
            Cfa::Bayer(_) => 4,
            Cfa::XTrans(_) => 9,
        }
    }

    /// Upsampling factor restoring full resolution after packing.
    pub fn upsample_factor(&self) -> usize {
        match self {
            Cfa::Bayer(_) => 2,
            Cfa::XTrans(_) => 3,
        }
    }

    /// Color of the site at mosaic position (y, x).
    pub fn color_at(&self, y: usize, x: usize) -> CfaColor {
        match self {
            Cfa::Bayer(map) => map[y % 2][x % 2],
            Cfa::XTrans(map) => map[y % 6][x % 6],
        }
    }

    fn pattern_string(&self) -> String {
        match self {
            Cfa::Bayer(map) => map
                .iter()
                .flat_map(|row| row.iter().map(|c| c.to_char()))
                .collect(),
            Cfa::XTrans(map) => {
                let rows: Vec<String> = map
                    .iter()
                    .map(|row| row.iter().map(|c| c.to_char()).collect())
                    .collect();
                rows.join(",")
            }
        }
    }
}

impl fmt::Display for Cfa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cfa::Bayer(_) => write!(f, "bayer:{}", self.pattern_string()),
            Cfa::XTrans(_) => write!(f, "xtrans:{}", self.pattern_string()),
        }
    }
}

/// Single-channel sensor mosaic with calibration metadata.
#[derive(Debug, Clone)]
pub struct RawFrame {
    pub data: Vec<u16>,
    pub height: usize,
    pub width: usize,
    pub cfa: Cfa,
    pub black_level: u16,
    pub white_level: u16,
    pub exposure_ratio: f64,
}

impl RawFrame {
    pub fn new(
        data: Vec<u16>,
        height: usize,
        width: usize,
        cfa: Cfa,
        black_level: u16,
        white_level: u16,
        exposure_ratio: f64,
    ) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "raw frame {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if black_level >= white_level {
            return Err(Error::Parameter(format!(
                "black level {black_level} must be below white level {white_level}"
            )));
        }
        let p = cfa.period();
        if height % p != 0 || width % p != 0 {
            return Err(Error::Dimension(format!(
                "frame {height}x{width} not divisible by CFA period {p}"
            )));
        }
        if exposure_ratio < 1.0 {
            return Err(Error::Parameter(format!(
                "exposure ratio {exposure_ratio} must be >= 1"
            )));
        }
        Ok(RawFrame {
            data,
            height,
            width,
            cfa,
            black_level,
            white_level,
            exposure_ratio,
        })
    }
}

/// RIMEF parameter set. `beta` is the lower bound of the map; training
/// uses `beta = 1`, HDR inference `beta = 1/ratio`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IlluminationParams {
    pub r: f64,
    pub alpha: f64,
    pub beta: f64,
    pub ratio: f64,
}

impl IlluminationParams {
    pub const DEFAULT_R: f64 = 1.0;
    pub const DEFAULT_ALPHA: f64 = 1e-6;

    /// Training regime: `beta = 1` collapses the map to uniform gain `ratio`.
    pub fn training(ratio: f64) -> Self {
        IlluminationParams {
            r: Self::DEFAULT_R,
            alpha: Self::DEFAULT_ALPHA,
            beta: 1.0,
            ratio,
        }
    }

    /// HDR inference regime: `beta = 1/ratio` lets highlights keep unit gain.
    pub fn hdr(ratio: f64) -> Self {
        IlluminationParams {
            r: Self::DEFAULT_R,
            alpha: Self::DEFAULT_ALPHA,
            beta: 1.0 / ratio,
            ratio,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.normalized().map(|_| ())
    }

    /// Validate and return the working parameter set. A `beta` within 0.1%
    /// below `1/ratio` (a hand-typed decimal approximation of the bound)
    /// snaps to exactly `1/ratio`, so the gain floor `M >= 1` stays exact.
    pub fn normalized(&self) -> Result<Self> {
        if !(self.r > 0.0) {
            return Err(Error::Parameter(format!("r = {} must be > 0", self.r)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Parameter(format!(
                "alpha = {} must lie in (0, 1)",
                self.alpha
            )));
        }
        if !(self.ratio >= 1.0) {
            return Err(Error::Parameter(format!(
                "ratio = {} must be >= 1",
                self.ratio
            )));
        }
        let floor = 1.0 / self.ratio;
        let mut beta = self.beta;
        if beta < floor && beta >= floor * 0.999 {
            beta = floor;
        }
        if !(beta >= floor && beta <= 1.0) {
            return Err(Error::Parameter(format!(
                "beta = {} must lie in [1/ratio = {floor}, 1]",
                self.beta
            )));
        }
        Ok(IlluminationParams { beta, ..*self })
    }
}

/// Illumination map value `m_f(x) = exp(-r x) ln(x + alpha) / ln(alpha)`.
///
/// Equals 1 at `x = 0` exactly and decays towards (slightly below) zero as
/// `x` approaches 1.
pub fn illumination_map(x: f64, r: f64, alpha: f64) -> f64 {
    (-r * x).exp() * (x + alpha).ln() / alpha.ln()
}

/// Per-pixel gain `M(x) = max(m_f(x), beta) * ratio`.
pub fn gain_at(x: f64, p: &IlluminationParams) -> f64 {
    illumination_map(x, p.r, p.alpha).max(p.beta) * p.ratio
}

/// Normalize a raw frame to [0, 1]: subtract the black level, divide by the
/// level span and clamp. Clamping absorbs dark-current undershoot.
pub fn normalize_black_level<T: Scalar>(frame: &RawFrame) -> Tensor<T> {
    let span = (frame.white_level - frame.black_level) as f64;
    let black = frame.black_level as f64;
    let data: Vec<T> = frame
        .data
        .iter()
        .map(|&v| T::from_f64(((v as f64 - black) / span).clamp(0.0, 1.0)))
        .collect();
    Tensor::from_vec(&[frame.height, frame.width], data).expect("frame dims validated")
}

/// Per-pixel RIMEF gain map for a normalized mosaic.
pub fn rimef_gain<T: Scalar>(x: &Tensor<T>, params: &IlluminationParams) -> Result<Tensor<T>> {
    let p = params.normalized()?;
    let data: Vec<T> = x
        .data()
        .iter()
        .map(|&v| T::from_f64(gain_at(Scalar::to_f64(v), &p)))
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Elementwise `x * gain`, clamped to [0, 1].
pub fn amplify<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != gain.shape() {
        return Err(Error::ShapeMismatch(format!(
            "amplify: {:?} vs {:?}",
            x.shape(),
            gain.shape()
        )));
    }
    let data: Vec<T> = x
        .data()
        .iter()
        .zip(gain.data().iter())
        .map(|(&v, &g)| {
            let y = Scalar::to_f64(v) * Scalar::to_f64(g);
            T::from_f64(y.clamp(0.0, 1.0))
        })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

fn expect_mosaic<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize)> {
    match x.shape() {
        [h, w] => Ok((*h, *w)),
        other => Err(Error::Dimension(format!(
            "expected an HxW mosaic tensor, got {other:?}"
        ))),
    }
}

fn bayer_site_order(cfa: &Cfa) -> Result<[(usize, usize); 4]> {
    let Cfa::Bayer(map) = cfa else {
        return Err(Error::Parameter("pack_bayer needs a Bayer CFA".into()));
    };
    let mut r = None;
    let mut b = None;
    let mut greens = Vec::new();
    for y in 0..2 {
        for x in 0..2 {
            match map[y][x] {
                CfaColor::R => r = Some((y, x)),
                CfaColor::B => b = Some((y, x)),
                CfaColor::G => greens.push((y, x)),
            }
        }
    }
    match (r, b, greens.as_slice()) {
        (Some(r), Some(b), [g1, g2]) => Ok([r, *g1, *g2, b]),
        _ => Err(Error::Parameter("malformed Bayer pattern".into())),
    }
}

/// Pack an HxW Bayer mosaic into (1, 4, H/2, W/2), channel order
/// (R, G1, G2, B) by CFA site. A lossless rearrangement.
pub fn pack_bayer<T: Scalar>(x: &Tensor<T>, cfa: &Cfa) -> Result<Tensor<T>> {
    let (h, w) = expect_mosaic(x)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!(
            "pack_bayer requires even dims, got {h}x{w}"
        )));
    }
    let sites = bayer_site_order(cfa)?;
    let (oh, ow) = (h / 2, w / 2);
    let d = x.data();
    let mut out = vec![T::zero(); 4 * oh * ow];
    for (c, &(dy, dx)) in sites.iter().enumerate() {
        let plane = c * oh * ow;
        for y in 0..oh {
            for xx in 0..ow {
                out[plane + y * ow + xx] = d[(2 * y + dy) * w + 2 * xx + dx];
            }
        }
    }
    drop(d);
    Tensor::from_vec(&[1, 4, oh, ow], out)
}

/// Exact inverse of [`pack_bayer`].
pub fn unpack_bayer<T: Scalar>(packed: &Tensor<T>, cfa: &Cfa) -> Result<Tensor<T>> {
    let [n, c, oh, ow] = match packed.shape() {
        [n, c, h, w] => [*n, *c, *h, *w],
        other => {
            return Err(Error::Dimension(format!(
                "unpack_bayer expects (1,4,h,w), got {other:?}"
            )))
        }
    };
    if n != 1 || c != 4 {
        return Err(Error::Dimension(format!(
            "unpack_bayer expects (1,4,h,w), got {:?}",
            packed.shape()
        )));
    }
    let sites = bayer_site_order(cfa)?;
    let (h, w) = (2 * oh, 2 * ow);
    let d = packed.data();
    let mut out = vec![T::zero(); h * w];
    for (ch, &(dy, dx)) in sites.iter().enumerate() {
        let plane = ch * oh * ow;
        for y in 0..oh {
            for xx in 0..ow {
                out[(2 * y + dy) * w + 2 * xx + dx] = d[plane + y * ow + xx];
            }
        }
    }
    drop(d);
    Tensor::from_vec(&[h, w], out)
}

/// Pack an HxW X-Trans mosaic into (1, 9, H/3, W/3).
///
/// The site-to-channel map is positional: mosaic site (y, x) lands in
/// channel `3*(y%3) + (x%3)` at packed position (y/3, x/3). The 6x6 color
/// period therefore spans two 3x3 half-tiles per axis; the map is fixed,
/// documented here and exactly invertible.
pub fn pack_xtrans<T: Scalar>(x: &Tensor<T>, cfa: &Cfa) -> Result<Tensor<T>> {
    if !matches!(cfa, Cfa::XTrans(_)) {
        return Err(Error::Parameter("pack_xtrans needs an X-Trans CFA".into()));
    }
    let (h, w) = expect_mosaic(x)?;
    if h % 6 != 0 || w % 6 != 0 {
        return Err(Error::Dimension(format!(
            "pack_xtrans requires dims divisible by 6, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 3, w / 3);
    let d = x.data();
    let mut out = vec![T::zero(); 9 * oh * ow];
    for y in 0..h {
        for xx in 0..w {
            let c = 3 * (y % 3) + (xx % 3);
            out[(c * oh + y / 3) * ow + xx / 3] = d[y * w + xx];
        }
    }
    drop(d);
    Tensor::from_vec(&[1, 9, oh, ow], out)
}

/// Exact inverse of [`pack_xtrans`].
pub fn unpack_xtrans<T: Scalar>(packed: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, oh, ow] = match packed.shape() {
        [n, c, h, w] => [*n, *c, *h, *w],
        other => {
            return Err(Error::Dimension(format!(
                "unpack_xtrans expects (1,9,h,w), got {other:?}"
            )))
        }
    };
    if n != 1 || c != 9 {
        return Err(Error::Dimension(format!(
            "unpack_xtrans expects (1,9,h,w), got {:?}",
            packed.shape()
        )));
    }
    let (h, w) = (3 * oh, 3 * ow);
    let d = packed.data();
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        for xx in 0..w {
            let ch = 3 * (y % 3) + (xx % 3);
            out[y * w + xx] = d[(ch * oh + y / 3) * ow + xx / 3];
        }
    }
    drop(d);
    Tensor::from_vec(&[h, w], out)
}

/// Pack a normalized mosaic with whichever packing its CFA calls for.
pub fn pack<T: Scalar>(x: &Tensor<T>, cfa: &Cfa) -> Result<Tensor<T>> {
    match cfa {
        Cfa::Bayer(_) => pack_bayer(x, cfa),
        Cfa::XTrans(_) => pack_xtrans(x, cfa),
    }
}

// ── Raw frame on disk: MCNT mosaic + key=value sidecar ──────────────────

pub(crate) fn parse_kv(contents: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, line) in contents.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::format(
                origin,
                format!("line {}: expected 'key = value'", lineno + 1),
            ));
        };
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Write a raw frame as an MCNT u16 mosaic plus a sidecar metadata file.
pub fn write_raw_frame(mcnt_path: &Path, meta_path: &Path, frame: &RawFrame) -> Result<()> {
    write_mcnt(
        mcnt_path,
        &[frame.height, frame.width],
        &McntPayload::U16(frame.data.clone()),
    )?;
    let (kind, pattern) = match &frame.cfa {
        Cfa::Bayer(_) => ("bayer", frame.cfa.pattern_string()),
        Cfa::XTrans(_) => ("xtrans", frame.cfa.pattern_string()),
    };
    let mut meta = String::new();
    meta.push_str(&format!("cfa = {kind}\n"));
    meta.push_str(&format!("pattern = {pattern}\n"));
    meta.push_str(&format!("black_level = {}\n", frame.black_level));
    meta.push_str(&format!("white_level = {}\n", frame.white_level));
    meta.push_str(&format!("exposure_ratio = {}\n", frame.exposure_ratio));
    std::fs::write(meta_path, meta).map_err(|e| Error::io(meta_path.display().to_string(), e))
}

/// Load a raw frame from its MCNT mosaic and sidecar metadata.
pub fn read_raw_frame(mcnt_path: &Path, meta_path: &Path) -> Result<RawFrame> {
    let (shape, payload) = read_mcnt(mcnt_path)?;
    let data = match payload {
        McntPayload::U16(v) => v,
        McntPayload::F32(_) => {
            return Err(Error::format(
                mcnt_path.display().to_string(),
                "raw frames must use the u16 dtype",
            ))
        }
    };
    let [h, w] = match shape.as_slice() {
        [h, w] => [*h, *w],
        other => {
            return Err(Error::format(
                mcnt_path.display().to_string(),
                format!("raw frames are rank 2, got {other:?}"),
            ))
        }
    };
    if !meta_path.exists() {
        return Err(Error::MissingFile(meta_path.to_path_buf()));
    }
    let origin = meta_path.display().to_string();
    let contents =
        std::fs::read_to_string(meta_path).map_err(|e| Error::io(origin.clone(), e))?;
    let mut cfa_kind = None;
    let mut pattern = None;
    let mut black = None;
    let mut white = None;
    let mut ratio = None;
    for (k, v) in parse_kv(&contents, &origin)? {
        match k.as_str() {
            "cfa" => cfa_kind = Some(v),
            "pattern" => pattern = Some(v),
            "black_level" => {
                black = Some(v.parse::<u16>().map_err(|_| {
                    Error::format(&origin, format!("black_level '{v}' is not a u16"))
                })?)
            }
            "white_level" => {
                white = Some(v.parse::<u16>().map_err(|_| {
                    Error::format(&origin, format!("white_level '{v}' is not a u16"))
                })?)
            }
            "exposure_ratio" => {
                ratio = Some(v.parse::<f64>().map_err(|_| {
                    Error::format(&origin, format!("exposure_ratio '{v}' is not a number"))
                })?)
            }
            other => {
                return Err(Error::format(&origin, format!("unknown key '{other}'")));
            }
        }
    }
    let missing = |k: &str| Error::format(&origin, format!("missing key '{k}'"));
    let cfa_kind = cfa_kind.ok_or_else(|| missing("cfa"))?;
    let cfa = match cfa_kind.as_str() {
        "bayer" => match pattern {
            Some(p) => Cfa::bayer_from_str(&p)?,
            None => Cfa::bayer_rggb(),
        },
        "xtrans" => match pattern {
            Some(p) => Cfa::xtrans_from_str(&p)?,
            None => Cfa::xtrans_default(),
        },
        other => {
            return Err(Error::format(
                &origin,
                format!("unknown cfa kind '{other}'"),
            ))
        }
    };
    RawFrame::new(
        data,
        h,
        w,
        cfa,
        black.ok_or_else(|| missing("black_level"))?,
        white.ok_or_else(|| missing("white_level"))?,
        ratio.ok_or_else(|| missing("exposure_ratio"))?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_frame(values: Vec<u16>, h: usize, w: usize) -> RawFrame {
        RawFrame::new(values, h, w, Cfa::bayer_rggb(), 512, 16383, 300.0).unwrap()
    }

    #[test]
    fn normalize_endpoints_and_undershoot() {
        let frame = test_frame(vec![512, 16383, 100, 8447], 2, 2);
        let t: Tensor<f64> = normalize_black_level(&frame);
        let d = t.to_vec();
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 1.0);
        assert_eq!(d[2], 0.0); // dark-current undershoot clamps to zero
        assert!((d[3] - 7935.0 / 15871.0).abs() < 1e-12);
    }

    #[test]
    fn illumination_map_is_one_at_zero() {
        for (r, alpha) in [(1.0, 1e-6), (5.0, 1e-6), (10.0, 0.1), (0.5, 0.3)] {
            assert_eq!(illumination_map(0.0, r, alpha), 1.0);
        }
    }

    #[test]
    fn rimef_worked_examples() {
        let p = IlluminationParams {
            r: 1.0,
            alpha: 1e-6,
            beta: 1.0 / 300.0,
            ratio: 300.0,
        };
        // x = 0: m_f = 1 so M = ratio
        assert_eq!(gain_at(0.0, &p), 300.0);
        // x = 0.5
        let mf = illumination_map(0.5, 1.0, 1e-6);
        assert!((mf - 0.0304305658397).abs() < 1e-12, "m_f = {mf}");
        assert!((gain_at(0.5, &p) - 9.1291697519).abs() < 1e-9);
        // x = 1: m_f dips just below zero, the lower bound takes over.
        // The tolerance allows the ~1e-10 relative error from rounding
        // 1 + alpha before the log.
        let mf1 = illumination_map(1.0, 1.0, 1e-6);
        assert!(mf1 < 0.0 && (mf1 + 2.66279885704e-8).abs() < 1e-16);
        assert_eq!(gain_at(1.0, &p), 1.0);
    }

    #[test]
    fn beta_one_collapses_to_uniform_gain() {
        let p = IlluminationParams::training(250.0);
        for k in 0..100 {
            let x = k as f64 / 99.0;
            assert_eq!(gain_at(x, &p), 250.0);
        }
    }

    #[test]
    fn rimef_gain_validates_beta_range() {
        let x = Tensor::<f64>::zeros(&[2, 2]);
        let bad = IlluminationParams {
            r: 1.0,
            alpha: 1e-6,
            beta: 1e-4, // below 1/300
            ratio: 300.0,
        };
        assert!(matches!(rimef_gain(&x, &bad), Err(Error::Parameter(_))));
        let bad = IlluminationParams {
            r: 1.0,
            alpha: 1e-6,
            beta: 1.5,
            ratio: 300.0,
        };
        assert!(matches!(rimef_gain(&x, &bad), Err(Error::Parameter(_))));
    }

    #[test]
    fn illumination_map_monotone_on_grid_at_defaults() {
        // Strict decrease over a dense grid for the parameter sets the
        // enhancement profiles actually use.
        for (r, alpha) in [(1.0, 1e-6), (5.0, 1e-6), (10.0, 1e-6), (1.0, 0.1)] {
            let mut prev = illumination_map(0.0, r, alpha);
            assert_eq!(prev, 1.0);
            for k in 1..10_000 {
                let x = k as f64 / 9999.0;
                let v = illumination_map(x, r, alpha);
                assert!(
                    v < prev,
                    "m_f not strictly decreasing at x={x} for r={r}, alpha={alpha}"
                );
                prev = v;
            }
        }
    }

    #[test]
    fn illumination_map_dips_past_its_zero_for_extreme_params() {
        // At r=10, alpha=0.1 the map crosses zero at x = 0.9 and climbs
        // slightly on the last stretch before x = 1. The gain never sees
        // this: beta >= 1/ratio > 0 clamps the negative tail.
        let a = illumination_map(0.995, 10.0, 0.1);
        let b = illumination_map(1.0, 10.0, 0.1);
        assert!(
            a < 0.0 && b < 0.0 && b > a,
            "expected a local rise, {a} vs {b}"
        );
        let p = IlluminationParams {
            r: 10.0,
            alpha: 0.1,
            beta: 1.0 / 200.0,
            ratio: 200.0,
        };
        let mut prev = gain_at(0.0, &p);
        for k in 1..10_000 {
            let x = k as f64 / 9999.0;
            let m = gain_at(x, &p);
            assert!(m <= prev && (1.0..=200.0).contains(&m));
            prev = m;
        }
    }

    #[test]
    fn gain_stays_in_band_for_valid_beta() {
        for beta in [1.0 / 300.0, 0.01, 0.5, 1.0] {
            let p = IlluminationParams {
                r: 1.0,
                alpha: 1e-6,
                beta,
                ratio: 300.0,
            };
            for k in 0..1000 {
                let x = k as f64 / 999.0;
                let m = gain_at(x, &p);
                assert!(m >= beta * 300.0 - 1e-12 && m <= 300.0 + 1e-12);
                assert!(m >= 1.0 - 1e-12);
            }
        }
    }

    #[test]
    fn amplify_identity_clamp_and_oracle() {
        let x = Tensor::from_vec(&[2, 2], vec![0.1f64, 0.5, 0.02, 0.9]).unwrap();
        let ones = Tensor::full(&[2, 2], 1.0f64);
        assert_eq!(amplify(&x, &ones).unwrap().to_vec(), x.to_vec());

        let g300 = Tensor::full(&[2, 2], 300.0f64);
        let clamped = amplify(&x, &g300).unwrap();
        assert_eq!(clamped.to_vec()[2], 1.0); // 0.02*300 = 6 clamps to 1

        let gain = Tensor::from_vec(&[2, 2], vec![2.0f64, 0.5, 10.0, 1.0]).unwrap();
        let got = amplify(&x, &gain).unwrap().to_vec();
        let expect: Vec<f64> = x
            .to_vec()
            .iter()
            .zip(gain.to_vec())
            .map(|(&a, b)| (a * b).clamp(0.0, 1.0))
            .collect();
        assert_eq!(got, expect);

        let wrong = Tensor::<f64>::zeros(&[4]);
        assert!(matches!(amplify(&x, &wrong), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn pack_bayer_unit_example() {
        let x = Tensor::from_vec(&[2, 2], vec![0.1f64, 0.2, 0.3, 0.4]).unwrap();
        let packed = pack_bayer(&x, &Cfa::bayer_rggb()).unwrap();
        assert_eq!(packed.shape(), &[1, 4, 1, 1]);
        // RGGB: r, g1, g2, b
        assert_eq!(packed.to_vec(), vec![0.1, 0.2, 0.3, 0.4]);

        // BGGR puts the same sites into (R, G1, G2, B) order.
        let bggr = Cfa::bayer_from_str("BGGR").unwrap();
        let packed = pack_bayer(&x, &bggr).unwrap();
        assert_eq!(packed.to_vec(), vec![0.4, 0.2, 0.3, 0.1]);
    }

    #[test]
    fn pack_bayer_shape_and_roundtrip() {
        let n = 512 * 512;
        let data: Vec<f32> = (0..n).map(|i| (i % 1000) as f32 / 1000.0).collect();
        let x = Tensor::from_vec(&[512, 512], data).unwrap();
        let cfa = Cfa::bayer_rggb();
        let packed = pack_bayer(&x, &cfa).unwrap();
        assert_eq!(packed.shape(), &[1, 4, 256, 256]);
        let back = unpack_bayer(&packed, &cfa).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());

        let odd = Tensor::<f32>::zeros(&[3, 4]);
        assert!(matches!(pack_bayer(&odd, &cfa), Err(Error::Dimension(_))));
    }

    #[test]
    fn pack_xtrans_shapes_and_roundtrip() {
        let cfa = Cfa::xtrans_default();
        let c = Tensor::full(&[6, 6], 0.7f64);
        let packed = pack_xtrans(&c, &cfa).unwrap();
        assert_eq!(packed.shape(), &[1, 9, 2, 2]);
        assert!(packed.to_vec().iter().all(|&v| v == 0.7));

        let bad = Tensor::<f64>::zeros(&[512, 512]);
        assert!(matches!(pack_xtrans(&bad, &cfa), Err(Error::Dimension(_))));

        let n = 510 * 510;
        let data: Vec<f64> = (0..n).map(|i| (i % 977) as f64 / 977.0).collect();
        let x = Tensor::from_vec(&[510, 510], data).unwrap();
        let packed = pack_xtrans(&x, &cfa).unwrap();
        assert_eq!(packed.shape(), &[1, 9, 170, 170]);
        let back = unpack_xtrans(&packed).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
    }

    #[test]
    fn raw_frame_sidecar_roundtrip() {
        let dir = std::env::temp_dir().join(format!("raw-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let frame = test_frame((0..16u16).map(|i| 512 + i * 700).collect(), 4, 4);
        let mcnt = dir.join("f.mcnt");
        let meta = dir.join("f.meta");
        write_raw_frame(&mcnt, &meta, &frame).unwrap();
        let back = read_raw_frame(&mcnt, &meta).unwrap();
        assert_eq!(back.data, frame.data);
        assert_eq!(back.cfa, frame.cfa);
        assert_eq!(back.black_level, 512);
        assert_eq!(back.white_level, 16383);
        assert_eq!(back.exposure_ratio, 300.0);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn invariants_on_frame_construction() {
        assert!(matches!(
            RawFrame::new(vec![0; 4], 2, 2, Cfa::bayer_rggb(), 1000, 1000, 100.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            RawFrame::new(vec![0; 6], 2, 3, Cfa::bayer_rggb(), 0, 100, 100.0),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            RawFrame::new(vec![0; 4], 2, 2, Cfa::bayer_rggb(), 0, 100, 0.5),
            Err(Error::Parameter(_))
        ));
    }
}
