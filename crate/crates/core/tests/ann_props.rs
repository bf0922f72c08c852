use emr_core::ann::{
    code_classes, forward_pass, generate_training_data, parse_eeprom, serialize_weights, to_bits, Mode, NetGeometry,
    WeightImage, WeightMatrix, EEPROM_CAPACITY,
};
use emr_core::sensor::{code_voltage, find_model, parse_catalog, OutputKind, CATALOG, VREF};
use proptest::prelude::*;

fn geometry_strategy() -> impl Strategy<Value = NetGeometry> {
    prop::collection::vec(1usize..12, 2..5).prop_map(|w| NetGeometry::new(&w).unwrap())
}

fn random_weights(g: NetGeometry, seed: u64, scale: f64) -> WeightMatrix {
    let base = WeightMatrix::random(g.clone(), seed);
    let mut w = WeightMatrix::zeros(g.clone());
    for l in 0..g.layer_count() - 1 {
        for n in 0..g.widths()[l + 1] {
            for c in 0..g.widths()[l] {
                w.set(l, n, c, f64::from((base.get(l, n, c) * scale) as f32));
            }
        }
    }
    w
}

proptest! {
    #[test]
    fn images_round_trip(g in geometry_strategy(), seed in any::<u64>(), scale in 0.001f64..1000.0) {
        let w = random_weights(g, seed, scale);
        let bytes = serialize_weights(&w, "GP2D12").unwrap();
        prop_assert_eq!(bytes.len(), w.geometry().image_len());
        let back = WeightImage::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.model.as_str(), "GP2D12");
        prop_assert!(back.converged);
        prop_assert_eq!(back.weights, w);
    }

    #[test]
    fn eeprom_holds_images_back_to_back(a in geometry_strategy(), b in geometry_strategy(), seed in any::<u64>()) {
        let mut first = WeightImage::new("A", random_weights(a, seed, 1.0));
        first.converged = false;
        let second = WeightImage::new("B", random_weights(b, seed ^ 1, 1.0));
        let mut dump = first.to_bytes().unwrap();
        dump.extend(second.to_bytes().unwrap());
        dump.resize(dump.len() + 64, 0xff);
        let images = parse_eeprom(&dump).unwrap();
        prop_assert_eq!(images.len(), 2);
        prop_assert_eq!(&images[0], &first);
        prop_assert_eq!(&images[1], &second);
    }

    #[test]
    fn frozen_pass_ignores_sub_margin_noise(seed in any::<u64>(), code in 0u32..1024, jitter in 0.0f64..1.0) {
        // Hand-built 10-4-2 net with integer sums, 0.5 away from the threshold.
        let g = NetGeometry::new(&[10, 4, 2]).unwrap();
        let mut w = WeightMatrix::zeros(g.clone());
        for n in 0..4 {
            w.set(0, n, n, 1.0);
            w.set(0, n, n + 4, -1.0);
        }
        w.set(1, 0, 0, 1.0);
        w.set(1, 0, 1, 1.0);
        w.set(1, 1, 2, 1.0);
        w.set(1, 1, 3, -1.0);
        let input = to_bits(code, 10);
        let (clean, _) = forward_pass(&w, &input, Mode::FrozenThreshold);
        // Each weight moves by at most 0.02, so no sum moves by more than 0.2.
        let noise = WeightMatrix::random(g.clone(), seed);
        let mut noisy = w.clone();
        let eps = 0.2 * jitter / 10.0;
        for l in 0..2 {
            for n in 0..g.widths()[l + 1] {
                for c in 0..g.widths()[l] {
                    noisy.set(l, n, c, w.get(l, n, c) + 2.0 * eps * noise.get(l, n, c));
                }
            }
        }
        let (perturbed, _) = forward_pass(&noisy, &input, Mode::FrozenThreshold);
        prop_assert_eq!(clean, perturbed);
    }
}

#[test]
fn training_targets_are_monotone_in_voltage() {
    let catalog = parse_catalog(CATALOG).unwrap();
    let analog = catalog.iter().filter(|s| s.output_kind != OutputKind::Digital1Bit);
    let mut checked = 0;
    // Entries without voltage anchors cannot be trained at all.
    for (spec, classes) in analog.filter_map(|s| code_classes(s, 1).ok().map(|c| (s, c))) {
        checked += 1;
        let mut codes: Vec<u16> = (0..1024).collect();
        codes.sort_by(|a, b| code_voltage(*b, VREF).total_cmp(&code_voltage(*a, VREF)));
        let valid: Vec<u32> = codes
            .iter()
            .map(|c| classes[usize::from(*c)])
            .filter(|c| *c > 0)
            .collect();
        assert!(!valid.is_empty(), "{}", spec.model_name);
        assert!(valid.windows(2).all(|p| p[0] <= p[1]), "{}", spec.model_name);
        assert!(valid
            .iter()
            .all(|c| f64::from(*c) >= spec.min_range.floor() && f64::from(*c) <= spec.max_range.ceil()));
    }
    assert!(checked >= 3);
}

#[test]
fn class_zero_complements_the_measuring_branch() {
    let catalog = parse_catalog(CATALOG).unwrap();
    let spec = find_model(&catalog, "GP2Y0A02YK").unwrap();
    let ts = generate_training_data(spec, 1).unwrap();
    let zeros = ts.classes.iter().filter(|c| **c == 0).count();
    assert_eq!(ts.class_counts[&0], zeros);
    assert_eq!(ts.class_counts.values().sum::<usize>(), 1024);
    let curve = spec.transfer_curve().unwrap();
    for (code, class) in ts.classes.iter().enumerate() {
        let inside = curve.distance(code_voltage(code as u16, VREF)).is_some();
        assert_eq!(*class == 0, !inside, "code {code}");
    }
}

#[test]
fn oversized_networks_do_not_fit_the_eeprom() {
    let g = NetGeometry::parse("10-64-64-8").unwrap();
    assert!(g.image_len() > EEPROM_CAPACITY);
    let w = WeightMatrix::zeros(g);
    assert!(serialize_weights(&w, "GP2Y0A02YK").is_err());
    let fits = NetGeometry::parse("10-48-48-8").unwrap();
    assert!(fits.image_len() <= EEPROM_CAPACITY);
}
