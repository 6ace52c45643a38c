//! Property tests for the structural invariants: lossless permutations,
//! gain-map bounds, and loss symmetries.

use proptest::prelude::*;

use mcn_core::raw::{
    gain_at, illumination_map, pack_bayer, pack_xtrans, unpack_bayer, unpack_xtrans, Cfa,
    IlluminationParams,
};
use mcn_core::tensor::io::{decode_mcnt, encode_mcnt, McntPayload};
use mcn_core::tensor::Tensor;

fn mosaic_strategy(max_half: usize) -> impl Strategy<Value = (usize, usize, Vec<f32>)> {
    (1..=max_half, 1..=max_half).prop_flat_map(|(hh, hw)| {
        let (h, w) = (2 * hh, 2 * hw);
        proptest::collection::vec(0.0f32..1.0, h * w).prop_map(move |v| (h, w, v))
    })
}

proptest! {
    #[test]
    fn bayer_packing_is_a_lossless_permutation(
        (h, w, data) in mosaic_strategy(12),
        pattern in prop_oneof![Just("RGGB"), Just("BGGR"), Just("GRBG"), Just("GBRG")],
    ) {
        let cfa = Cfa::bayer_from_str(pattern).unwrap();
        let x = Tensor::from_vec(&[h, w], data).unwrap();
        let packed = pack_bayer(&x, &cfa).unwrap();
        prop_assert_eq!(packed.shape(), &[1, 4, h / 2, w / 2]);
        // A permutation preserves the multiset of values...
        let mut a = x.to_vec();
        let mut b = packed.to_vec();
        a.sort_by(f32::total_cmp);
        b.sort_by(f32::total_cmp);
        prop_assert_eq!(a, b);
        // ...and the documented inverse restores every site bit-exactly.
        let back = unpack_bayer(&packed, &cfa).unwrap();
        prop_assert_eq!(back.to_vec(), x.to_vec());
    }

    #[test]
    fn xtrans_packing_roundtrips(
        hh in 1usize..=3,
        hw in 1usize..=3,
        seed in 0u64..1000,
    ) {
        let (h, w) = (6 * hh, 6 * hw);
        let data: Vec<f32> = (0..h * w)
            .map(|i| (((i as u64).wrapping_mul(seed + 1) % 1009) as f32) / 1009.0)
            .collect();
        let cfa = Cfa::xtrans_default();
        let x = Tensor::from_vec(&[h, w], data).unwrap();
        let packed = pack_xtrans(&x, &cfa).unwrap();
        prop_assert_eq!(packed.shape(), &[1, 9, h / 3, w / 3]);
        let back = unpack_xtrans(&packed).unwrap();
        prop_assert_eq!(back.to_vec(), x.to_vec());
    }

    #[test]
    fn depth_to_space_is_a_bijection(
        factor in 2usize..=3,
        c_mult in 1usize..=3,
        h in 1usize..=6,
        w in 1usize..=6,
        seed in 0u64..1000,
    ) {
        let c = c_mult * factor * factor;
        let data: Vec<f32> = (0..2 * c * h * w)
            .map(|i| (((i as u64).wrapping_mul(seed + 7) % 2027) as f32) / 2027.0)
            .collect();
        let x = Tensor::from_vec(&[2, c, h, w], data).unwrap();
        let up = x.depth_to_space(factor).unwrap();
        prop_assert_eq!(up.shape(), &[2, c / (factor * factor), h * factor, w * factor]);
        let back = up.space_to_depth(factor).unwrap();
        prop_assert_eq!(back.to_vec(), x.to_vec());
    }

    #[test]
    fn gain_map_stays_in_band_and_is_monotone(
        r in 0.2f64..6.0,
        alpha_exp in -8.0f64..-0.5,
        beta_t in 0.0f64..1.0,
        ratio in 1.0f64..400.0,
    ) {
        let alpha = 10f64.powf(alpha_exp);
        // beta interpolated across its legal band [1/ratio, 1].
        let beta = 1.0 / ratio + beta_t * (1.0 - 1.0 / ratio);
        let p = IlluminationParams { r, alpha, beta, ratio };
        p.validate().unwrap();
        prop_assert_eq!(illumination_map(0.0, r, alpha), 1.0);
        let mut prev = f64::INFINITY;
        for k in 0..=1000 {
            let x = k as f64 / 1000.0;
            let m = gain_at(x, &p);
            prop_assert!(m <= prev + 1e-12, "gain must not increase with brightness");
            prop_assert!(m >= beta * ratio - 1e-9 && m <= ratio + 1e-9);
            prop_assert!(m >= 1.0 - 1e-9);
            prev = m;
        }
        // beta = 1 degenerates to uniform linear gain.
        let linear = IlluminationParams { beta: 1.0, ..p };
        for k in 0..=100 {
            let x = k as f64 / 100.0;
            prop_assert_eq!(gain_at(x, &linear), ratio);
        }
    }

    #[test]
    fn mcnt_encoding_roundtrips(
        shape in proptest::collection::vec(1usize..6, 1..4),
        seed in 0u64..1000,
    ) {
        let n: usize = shape.iter().product();
        let values: Vec<f32> = (0..n)
            .map(|i| ((i as u64).wrapping_mul(seed + 3) % 4099) as f32 * 0.25 - 512.0)
            .collect();
        let bytes = encode_mcnt(&shape, &McntPayload::F32(values.clone())).unwrap();
        let (s2, payload, used) = decode_mcnt(&bytes, "buf").unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(s2, shape);
        prop_assert_eq!(payload, McntPayload::F32(values));
    }
}
