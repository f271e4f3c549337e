mod oracle;

use mirror_core::detect::IntegralImage;
use mirror_core::tensor::{conv2d, layernorm, matmul, max_pool2d, softmax, Padding, Tensor};
use mirror_core::Frame;
use oracle::{max_abs_diff, Nd};
use proptest::prelude::*;

fn values(n: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-2.0f32..2.0, n)
}

fn gray_frame() -> impl Strategy<Value = Frame> {
    (1u32..40, 1u32..40).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<u8>(), (w * h) as usize)
            .prop_map(move |px| Frame::new(px, w, h, 1, 0).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn integral_matches_brute_force(f in gray_frame(), a in any::<(u32, u32, u32, u32)>()) {
        let ii = IntegralImage::new(&f);
        let (w, h) = (f.width(), f.height());
        let (x1, x2) = { let p = a.0 % (w + 1); let q = a.1 % (w + 1); (p.min(q), p.max(q)) };
        let (y1, y2) = { let p = a.2 % (h + 1); let q = a.3 % (h + 1); (p.min(q), p.max(q)) };
        prop_assert_eq!(ii.rect_sum(x1, y1, x2, y2), oracle::brute_rect_sum(&f, x1, y1, x2, y2));
        let brute_sq: u64 = (y1..y2).flat_map(|y| (x1..x2).map(move |x| (x, y)))
            .map(|(x, y)| (f.gray_at(x, y) as u64).pow(2)).sum();
        prop_assert_eq!(ii.rect_square_sum(x1, y1, x2, y2), brute_sq);
    }

    #[test]
    fn luma_stays_in_channel_range(px in prop::collection::vec(any::<u8>(), 3 * 16)) {
        let f = Frame::new(px.clone(), 4, 4, 3, 0).unwrap();
        let g = f.to_grayscale().unwrap();
        for (i, &y) in g.pixels().iter().enumerate() {
            let rgb = &px[i * 3..i * 3 + 3];
            prop_assert!(y >= *rgb.iter().min().unwrap() && y <= *rgb.iter().max().unwrap());
        }
    }

    #[test]
    fn resize_preserves_range(f in gray_frame(), ow in 1u32..50, oh in 1u32..50) {
        let r = f.resize_bilinear(ow, oh).unwrap();
        prop_assert_eq!((r.width(), r.height()), (ow, oh));
        let lo = *f.pixels().iter().min().unwrap();
        let hi = *f.pixels().iter().max().unwrap();
        prop_assert!(r.pixels().iter().all(|&p| p >= lo && p <= hi));
    }

    #[test]
    fn matmul_matches(m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in values(72)) {
        let a = Tensor::new(vec![m, k], seed[..m * k].to_vec()).unwrap();
        let b = Tensor::new(vec![k, n], seed[36..36 + k * n].to_vec()).unwrap();
        let want = oracle::matmul(&Nd::from_f32(a.shape(), a.data()), &Nd::from_f32(b.shape(), b.data()));
        prop_assert!(max_abs_diff(matmul(&a, &b).unwrap().data(), &want.data) <= 1e-5);
    }

    #[test]
    fn matmul_identity_and_transpose(data in values(50)) {
        let a = Tensor::new(vec![5, 5], data[..25].to_vec()).unwrap();
        let b = Tensor::new(vec![5, 5], data[25..].to_vec()).unwrap();
        let eye = Tensor::new(vec![5, 5], (0..25).map(|i| if i % 6 == 0 { 1.0 } else { 0.0 }).collect()).unwrap();
        let ae = matmul(&a, &eye).unwrap();
        let ea = matmul(&eye, &a).unwrap();
        prop_assert_eq!(ae.data(), a.data());
        prop_assert_eq!(ea.data(), a.data());
        let left = matmul(&a, &b).unwrap().transpose2().unwrap();
        let right = matmul(&b.transpose2().unwrap(), &a.transpose2().unwrap()).unwrap();
        let diff = left.data().iter().zip(right.data()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        prop_assert!(diff <= 1e-5);
    }

    #[test]
    fn conv_matches(
        h in 1usize..9, w in 1usize..9, groups in 1usize..3, cpg in 1usize..3, opg in 1usize..3,
        k in 1usize..4, stride in 1usize..3, same in any::<bool>(), data in values(9 * 9 * 4 + 3 * 3 * 2 * 4),
    ) {
        prop_assume!(same || (k <= h && k <= w));
        let cin = groups * cpg;
        let cout = groups * opg;
        let x = Tensor::new(vec![h, w, cin], data[..h * w * cin].to_vec()).unwrap();
        let kn = Tensor::new(vec![k, k, cpg, cout], data[324..324 + k * k * cpg * cout].to_vec()).unwrap();
        let pad = if same { Padding::Same } else { Padding::Valid };
        let got = conv2d(&x, &kn, stride, pad, groups).unwrap();
        let want = oracle::conv2d(&Nd::from_f32(x.shape(), x.data()), &Nd::from_f32(kn.shape(), kn.data()), stride, same, groups);
        prop_assert_eq!(got.shape(), &want.shape[..]);
        prop_assert!(max_abs_diff(got.data(), &want.data) <= 1e-5);
    }

    #[test]
    fn max_pool_matches(h in 1usize..9, w in 1usize..9, c in 1usize..3, size in 1usize..4, stride in 1usize..3, same in any::<bool>(), data in values(162)) {
        prop_assume!(same || (size <= h && size <= w));
        let x = Tensor::new(vec![h, w, c], data[..h * w * c].to_vec()).unwrap();
        let pad = if same { Padding::Same } else { Padding::Valid };
        let got = max_pool2d(&x, size, stride, pad).unwrap();
        let want = oracle::max_pool(&Nd::from_f32(x.shape(), x.data()), size, stride, same);
        prop_assert!(max_abs_diff(got.data(), &want.data) == 0.0);
    }

    #[test]
    fn layernorm_matches(rows in 1usize..5, d in 2usize..17, data in values(4 * 16 + 32)) {
        let x = Tensor::new(vec![rows, d], data[..rows * d].to_vec()).unwrap();
        let g = Tensor::new(vec![d], data[64..64 + d].to_vec()).unwrap();
        let b = Tensor::new(vec![d], data[80..80 + d].to_vec()).unwrap();
        let got = layernorm(&x, &g, &b, 1e-5).unwrap();
        let to64 = |t: &Tensor| t.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
        let want = oracle::layernorm(&Nd::from_f32(x.shape(), x.data()), &to64(&g), &to64(&b), 1e-5);
        prop_assert!(max_abs_diff(got.data(), &want.data) <= 1e-4, "{}", max_abs_diff(got.data(), &want.data));
    }

    #[test]
    fn softmax_matches_and_sums_to_one(rows in 1usize..4, d in 1usize..12, data in prop::collection::vec(-1000.0f32..1000.0, 48)) {
        let x = Tensor::new(vec![rows, d], data[..rows * d].to_vec()).unwrap();
        let got = softmax(&x);
        for (r, row) in got.data().chunks(d).enumerate() {
            let want = oracle::softmax(&x.data()[r * d..(r + 1) * d].iter().map(|&v| v as f64).collect::<Vec<_>>());
            prop_assert!(max_abs_diff(row, &want) <= 1e-5);
            prop_assert!((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }
}
