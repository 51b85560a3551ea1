use splitleak::data::{
    parse_csv, preset_dataset, split_dataset, standardize, synthetic_regression, GroundTruth, Preset, SyntheticKind,
};

#[test]
fn presets_match_their_shapes() {
    for preset in [Preset::BostonLike, Preset::EnergyLike, Preset::CaliforniaLike] {
        let s = preset.shape();
        let ds = preset_dataset(preset, 7).unwrap();
        assert_eq!(ds.len(), s.n);
        assert_eq!(ds.num_features(), s.p);
        assert!(ds.min_label() >= s.label_min && ds.max_label() <= s.label_max);
        let mean = ds.labels.iter().sum::<f64>() / ds.len() as f64;
        assert!((mean - s.label_mean).abs() < 0.1 * s.label_std, "{preset:?} mean {mean}");
    }
}

#[test]
fn ccpp_style_csv_keeps_label_range() {
    let mut text = String::from("AT,V,AP,RH,PE\n");
    for i in 0..50 {
        let pe = 420.26 + (495.76 - 420.26) * i as f64 / 49.0;
        text.push_str(&format!("{},{},{},{},{pe}\n", 10 + i, 40 + i, 1000 + i, 60 + i));
    }
    let ds = parse_csv("ccpp", &text, "PE", b',').unwrap();
    assert_eq!(ds.num_features(), 4);
    assert!(ds.min_label() >= 420.26 && ds.max_label() <= 495.76);
}

#[test]
fn split_of_400_rows_is_320_80() {
    let ds = preset_dataset(Preset::BostonLike, 1).unwrap();
    let s = split_dataset(&ds, 0.8, 0, 2).unwrap();
    assert_eq!((s.train.len(), s.test.len()), (320, 80));
    assert!(s.known.is_empty());
    assert_eq!(s, split_dataset(&ds, 0.8, 0, 2).unwrap());
    let k = s.with_known(6, 3).unwrap();
    assert_eq!(k.known.len(), 6);
    assert!(k.known.iter().all(|i| s.train.contains(i)));
}

#[test]
fn standardization_by_hand() {
    let text = "a,b,y\n1,5,0.5\n2,5,1\n3,5,2\n10,5,3\n";
    let ds = parse_csv("toy", text, "y", b',').unwrap();
    let split = splitleak::data::SplitIndices {
        train: vec![0, 1, 2],
        test: vec![3],
        known: vec![],
        seed: 0,
    };
    let (out, stats) = standardize(&ds, &split).unwrap();
    // train column a = {1, 2, 3}: mean 2, sample std 1; column b is constant
    assert_eq!(stats.means, vec![2.0, 5.0]);
    assert_eq!(stats.stds, vec![1.0, 1.0]);
    assert_eq!(out.features.row(3), &[8.0, 0.0]);
    assert_eq!(out.features.row(0), &[-1.0, 0.0]);
    assert_eq!(out.labels, ds.labels);
    // the input is left untouched
    assert_eq!(ds.features.row(3), &[10.0, 5.0]);
}

#[test]
fn standardized_train_means_are_zero() {
    let ds = preset_dataset(Preset::BostonLike, 4).unwrap();
    let split = split_dataset(&ds, 0.8, 0, 5).unwrap();
    let (out, _) = standardize(&ds, &split).unwrap();
    let x = out.rows(&split.train);
    let (n, p) = x.dims2();
    for j in 0..p {
        let m = (0..n).map(|i| x.get2(i, j)).sum::<f64>() / n as f64;
        assert!(m.abs() < 1e-12);
    }
}

#[test]
fn noiseless_linear_labels_are_exact() {
    let syn = synthetic_regression(30, 3, SyntheticKind::Linear, 0.0, 8).unwrap();
    let GroundTruth::Linear { weights, bias } = &syn.truth else {
        panic!("expected a linear ground truth");
    };
    for i in 0..30 {
        let y: f64 = syn.dataset.features.row(i).iter().zip(weights).map(|(a, b)| a * b).sum::<f64>() + bias;
        assert_eq!(syn.dataset.labels[i], y);
    }
}

#[test]
fn teacher_labels_match_independent_evaluation() {
    let syn = synthetic_regression(40, 5, SyntheticKind::MlpTeacher, 0.0, 9).unwrap();
    let GroundTruth::Teacher(teacher) = &syn.truth else {
        panic!("expected a teacher network");
    };
    let (w0, b0, w1, b1) = (&teacher.weights()[0], &teacher.biases()[0], &teacher.weights()[1], &teacher.biases()[1]);
    for i in 0..40 {
        let x = syn.dataset.features.row(i);
        let mut y = b1.data()[0];
        for h in 0..w0.dims2().1 {
            let z: f64 = b0.data()[h] + (0..5).map(|k| x[k] * w0.get2(k, h)).sum::<f64>();
            y += z.tanh() * w1.get2(h, 0);
        }
        assert!((syn.dataset.labels[i] - y).abs() < 1e-12);
    }
}

#[test]
fn generators_are_seeded() {
    let a = synthetic_regression(20, 2, SyntheticKind::MlpTeacher, 0.3, 10).unwrap().dataset;
    let b = synthetic_regression(20, 2, SyntheticKind::MlpTeacher, 0.3, 10).unwrap().dataset;
    assert_eq!(a, b);
    assert_eq!(a.digest(), b.digest());
    let c = synthetic_regression(20, 2, SyntheticKind::MlpTeacher, 0.3, 11).unwrap().dataset;
    assert_ne!(a.digest(), c.digest());
    assert_eq!(preset_dataset(Preset::EnergyLike, 3).unwrap(), preset_dataset(Preset::EnergyLike, 3).unwrap());
}

#[test]
fn constant_column_maps_to_zero() {
    let ds = parse_csv("toy", "a,y\n4,1\n4,2\n4,3\n", "y", b',').unwrap();
    let split = split_dataset(&ds, 0.5, 0, 1).unwrap();
    let (out, _) = standardize(&ds, &split).unwrap();
    assert!(out.features.data().iter().all(|v| *v == 0.0));
}
