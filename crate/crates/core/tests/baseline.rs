use alcs::nn::{accuracy, make_synthetic_task, train, Architecture, Classification, TrainConfig};

#[test]
fn dense_baseline_reaches_ninety_percent() {
    let data = make_synthetic_task(0, 4, 1200).unwrap();
    let arch = Architecture::toy(4);
    let mut params = arch.init_params(0);
    let losses = train(&Classification::new(&arch, &data), &mut params, &TrainConfig::default(), None);
    let val = accuracy(&arch, &params, &data, data.validation_indices());
    eprintln!(
        "dense baseline: {} epochs, final loss {:.5}, validation accuracy {:.3}",
        losses.len(),
        losses[losses.len() - 1],
        val
    );
    assert!(val >= 0.9, "validation accuracy {val}");
}

#[test]
fn tail_architecture_trains_too() {
    let data = make_synthetic_task(1, 4, 400).unwrap();
    let arch = Architecture::toy_tail(4);
    let mut params = arch.init_params(0);
    train(&Classification::new(&arch, &data), &mut params, &TrainConfig { epochs: 4, ..Default::default() }, None);
    assert!(accuracy(&arch, &params, &data, data.validation_indices()) >= 0.9);
}
