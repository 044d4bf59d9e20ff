use proptest::prelude::*;

use ovseg3d::afi::{afi, coverage_probability, fibonacci_lattice, AfiConfig, AfiInput};
use ovseg3d::classdict::{semi_positive_weights, ClassDictionary, ClassEntry};
use ovseg3d::eval::{confusion, miou};
use ovseg3d::features::FeatureMatrix;
use ovseg3d::io::encode_rle;
use ovseg3d::math::Vec3;
use ovseg3d::projection::CalibratedCamera;
use ovseg3d::spatial::{canonical_order, farthest_point_sampling, KdTree};
use ovseg3d::tmp::{loss_ip, loss_tp, TmpBatch};
use ovseg3d::{ClassId, LabelField, UNLABELED};

fn d2(a: &Vec3, b: &Vec3) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

fn cloud(max: usize) -> impl Strategy<Value = Vec<Vec3>> {
    // coarse integer grid, so ties occur often
    prop::collection::vec(prop::array::uniform3(-8i32..8), 1..max)
        .prop_map(|v| v.into_iter().map(|p| [p[0] as f64 * 0.5, p[1] as f64 * 0.5, p[2] as f64 * 0.5]).collect())
}

fn unit_rows(r: usize, dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, r * dim).prop_filter("non-zero rows", move |v| {
        v.chunks(dim).all(|row| row.iter().map(|x| x * x).sum::<f64>() > 1e-3)
    })
}

fn dict(classes: usize, prompts_per_class: usize) -> ClassDictionary {
    ClassDictionary::new(
        (0..classes)
            .map(|c| ClassEntry {
                id: c as ClassId,
                name: format!("class{c}"),
                prompts: (0..prompts_per_class).map(|p| format!("c{c}p{p}")).collect(),
            })
            .collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_matches_brute_force(pts in cloud(60), q in prop::array::uniform3(-5.0f64..5.0), k in 0usize..12) {
        let tree = KdTree::new(&pts);
        let got = tree.knn(&q, k, None);
        let mut want: Vec<(usize, f64)> = pts.iter().enumerate().map(|(i, p)| (i, d2(&q, p))).collect();
        want.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        want.truncate(k);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn knn_exclusion_drops_only_that_index(pts in cloud(40), k in 1usize..8) {
        let tree = KdTree::new(&pts);
        let got = tree.knn(&pts[0], k, Some(0));
        prop_assert!(got.iter().all(|&(i, _)| i != 0));
        prop_assert_eq!(got.len(), k.min(pts.len() - 1));
    }

    #[test]
    fn fps_picks_distinct_points(pts in cloud(50), frac in 0.0f64..1.0) {
        let count = ((pts.len() as f64) * frac).ceil() as usize;
        let s = farthest_point_sampling(&pts, count, 0);
        prop_assert_eq!(s.len(), count.min(pts.len()));
        let mut sorted = s.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), s.len());
        if let Some(&first) = s.first() {
            prop_assert_eq!(first, 0);
        }
    }

    #[test]
    fn canonical_order_ignores_input_order(pts in prop::collection::vec(prop::array::uniform3(-4i8..4), 1..40), seed in any::<u64>()) {
        let pts: Vec<[f32; 3]> = pts.into_iter().map(|p| [p[0] as f32, p[1] as f32, p[2] as f32]).collect();
        let n = pts.len();
        let perm: Vec<usize> = {
            let mut v: Vec<usize> = (0..n).collect();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                v.swap(i, (s >> 33) as usize % (i + 1));
            }
            v
        };
        let shuffled: Vec<[f32; 3]> = perm.iter().map(|&i| pts[i]).collect();
        let a: Vec<[u32; 3]> = canonical_order(&pts).iter().map(|&i| pts[i].map(f32::to_bits)).collect();
        let b: Vec<[u32; 3]> = canonical_order(&shuffled).iter().map(|&i| shuffled[i].map(f32::to_bits)).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rle_decodes_back(bits in prop::collection::vec(any::<bool>(), 0..200)) {
        let rle = encode_rle(bits.iter().copied());
        let mut decoded = vec![false; bits.len()];
        for (s, n) in &rle {
            prop_assert!(*n > 0);
            for p in *s..*s + *n {
                decoded[p as usize] = true;
            }
        }
        prop_assert_eq!(decoded, bits);
    }

    #[test]
    fn label_bytes_round_trip(labels in prop::collection::vec(any::<u16>(), 0..100)) {
        let f = LabelField::new(labels);
        prop_assert_eq!(LabelField::from_le_bytes(&f.to_le_bytes()).unwrap(), f);
    }

    #[test]
    fn lattice_is_unit_and_spans_z(m in 1usize..400) {
        let b = fibonacci_lattice(m);
        prop_assert_eq!(b.len(), m);
        for n in &b.normals {
            prop_assert!(((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() - 1.0).abs() <= 1e-12);
            prop_assert!(n[2] > -1.0 && n[2] < 1.0);
        }
        let mean_z: f64 = b.normals.iter().map(|n| n[2]).sum::<f64>() / m as f64;
        prop_assert!(mean_z.abs() < 1e-12);
    }

    #[test]
    fn coverage_decreases_with_distance(a in 0.0f64..100.0, b in 0.0f64..100.0, beta in 1.1f64..20.0, s in 1.0f64..50.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (p_lo, p_hi) = (coverage_probability(lo, beta, s), coverage_probability(hi, beta, s));
        prop_assert!(p_hi <= p_lo);
        prop_assert!(p_lo < 1.0 && p_hi >= 0.0);
        prop_assert!((coverage_probability(s, beta, s) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn text_loss_without_alpha_is_image_loss(r in 1usize..6, dim in 1usize..6, seed in any::<u64>(), tau in 0.05f64..2.0) {
        let mut state = seed | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut rows = |n: usize| -> Vec<f64> { (0..n).map(|k| next() + if k % dim == 0 { 1.0 } else { 0.0 }).collect() };
        let superpoints = rows(r * dim);
        let texts = rows(r * dim);
        let batch = TmpBatch {
            dim,
            superpoints: superpoints.clone(),
            superpixels: texts.clone(),
            texts,
            prompts: (0..r as u32).collect(),
            tau,
            alpha_image: 0.5,
            alpha_text: 0.5,
        };
        let ip = loss_ip(&batch).unwrap();
        let tp = loss_tp(&batch, &vec![0.0; r * r]).unwrap();
        prop_assert!((ip.loss - tp.loss).abs() <= 1e-12 * ip.loss.abs().max(1.0));
        for (a, b) in ip.grad.iter().zip(&tp.grad) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn shared_text_closed_form(r in 2usize..9, dim in 2usize..6, tau in 0.05f64..1.0) {
        // distinct prompts of one class, identical text features aligned with
        // every superpoint: negatives reduce to e^0
        let one: Vec<f64> = (0..dim).map(|k| if k == 0 { 1.0 } else { 0.0 }).collect();
        let rows = one.repeat(r);
        let d = dict(1, r);
        let feats = FeatureMatrix::from_rows_f64(&vec![one.clone(); r], dim).unwrap();
        let prompts: Vec<u32> = (0..r as u32).collect();
        let alpha = semi_positive_weights(&feats, &prompts, &d).unwrap();
        let batch = TmpBatch {
            dim,
            superpoints: rows.clone(),
            superpixels: rows.clone(),
            texts: rows,
            prompts,
            tau,
            alpha_image: 0.5,
            alpha_text: 0.5,
        };
        let got = loss_tp(&batch, &alpha).unwrap().loss;
        let want = (1.0 + (r as f64 - 1.0) * (-1.0 / tau).exp()).ln();
        prop_assert!((got - want).abs() <= 1e-12 * want.max(1e-300) + 1e-15, "{} vs {}", got, want);
    }

    #[test]
    fn semi_positive_weights_properties(
        prompts in prop::collection::vec(0u32..6, 1..8),
        feats in unit_rows(6, 3),
    ) {
        let d = dict(3, 2);
        let r = prompts.len();
        let rows: Vec<Vec<f64>> = prompts.iter().map(|&p| feats[p as usize * 3..p as usize * 3 + 3].to_vec()).collect();
        let m = FeatureMatrix::from_rows_f64(&rows, 3).unwrap();
        let alpha = semi_positive_weights(&m, &prompts, &d).unwrap();
        for i in 0..r {
            prop_assert_eq!(alpha[i * r + i], 0.0);
            for j in 0..r {
                prop_assert_eq!(alpha[i * r + j], alpha[j * r + i]);
                prop_assert!(alpha[i * r + j].abs() <= 1.0 + 1e-12);
                if prompts[i] / 2 != prompts[j] / 2 || prompts[i] == prompts[j] {
                    prop_assert_eq!(alpha[i * r + j], 0.0);
                }
            }
        }
    }

    #[test]
    fn miou_bounds_and_perfect_prediction(gt in prop::collection::vec(0u16..5, 1..80), pred in prop::collection::vec(0u16..5, 1..80)) {
        let n = gt.len().min(pred.len());
        let gt = LabelField::new(gt[..n].to_vec());
        let pred = LabelField::new(pred[..n].to_vec());
        let m = miou(&confusion(&gt, &pred, 5).unwrap());
        prop_assert!((0.0..=100.0).contains(&m.miou));
        prop_assert_eq!(miou(&confusion(&gt, &gt, 5).unwrap()).miou, 100.0);
    }

    #[test]
    fn projected_point_lies_on_pixel_ray(x in -5.0f64..5.0, y in 5.0f64..30.0, z in -2.0f64..4.0) {
        let cam = CalibratedCamera::look_at([0.0, 0.0, 2.0], [0.0, 10.0, 1.0], 320, 240, 90.0);
        if let Some((u, v, depth)) = cam.project_point([x, y, z]) {
            let ray = cam.pixel_ray(u as f64, v as f64);
            let c = cam.center();
            let off = [x - c[0], y - c[1], z - c[2]];
            let along: f64 = (0..3).map(|k| off[k] * ray[k]).sum();
            let perp = (d2(&off, &[0.0; 3]) - along * along).max(0.0).sqrt();
            // within half a pixel diagonal at this depth
            let f = 160.0;
            prop_assert!(perp <= depth * 0.75 / f, "{}", perp);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn afi_never_invents_classes(
        pts in prop::collection::vec(prop::array::uniform3(-40i32..40), 2..120),
        labels in prop::collection::vec(prop_oneof![Just(UNLABELED), 0u16..4], 120),
    ) {
        let points: Vec<[f32; 3]> = pts.iter().map(|p| [p[0] as f32 / 8.0, p[1] as f32 / 8.0, p[2] as f32 / 16.0]).collect();
        let predict = LabelField::new(labels[..points.len()].to_vec());
        let cfg = AfiConfig { coverage_enabled: false, knn: 8, ..Default::default() };
        let out = afi(AfiInput { points: &points, predict: &predict, fov: None, pseudo: None, num_classes: 4 }, &cfg).unwrap();
        let present: Vec<u16> = predict.as_slice().iter().copied().filter(|&l| l != UNLABELED).collect();
        for &l in out.as_slice() {
            prop_assert!(l == UNLABELED || present.contains(&l));
        }
        // with any evidence at all, every point gets a label
        prop_assert_eq!(out.as_slice().iter().all(|&l| l != UNLABELED), !present.is_empty());
    }

    #[test]
    fn afi_translation_invariance(
        pts in prop::collection::vec(prop::array::uniform3(-40i32..40), 2..100),
        labels in prop::collection::vec(0u16..3, 100),
        shift in prop::array::uniform3(-4096i32..4096),
    ) {
        let points: Vec<[f32; 3]> = pts.iter().map(|p| [p[0] as f32 / 8.0, p[1] as f32 / 8.0, p[2] as f32 / 8.0]).collect();
        let moved: Vec<[f32; 3]> = points
            .iter()
            .map(|p| [p[0] + shift[0] as f32 / 1024.0, p[1] + shift[1] as f32 / 1024.0, p[2] + shift[2] as f32 / 1024.0])
            .collect();
        let predict = LabelField::new(labels[..points.len()].to_vec());
        let cfg = AfiConfig { coverage_enabled: false, knn: 8, ..Default::default() };
        let run = |p: &[[f32; 3]]| afi(AfiInput { points: p, predict: &predict, fov: None, pseudo: None, num_classes: 3 }, &cfg).unwrap();
        prop_assert_eq!(run(&points), run(&moved));
    }
}
