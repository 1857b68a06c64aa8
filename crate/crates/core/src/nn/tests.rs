use super::*;
use crate::attention::WaVariant;
use crate::autodiff::{gradcheck_many, Graph};
use crate::data::Rng;
use crate::error::Error;
use crate::tensor::Tensor;
use crate::wavelet::Wavelet;

fn spec(placement: Placement) -> NetworkSpec {
    NetworkSpec { placement, ..NetworkSpec::default() }
}

fn tiny(placement: Placement, variant: WaVariant) -> NetworkSpec {
    NetworkSpec {
        stage_widths: vec![2, 3, 3],
        blocks_per_stage: 1,
        placement,
        variant,
        num_classes: 3,
        ..NetworkSpec::default()
    }
}

#[test]
fn logits_shape() {
    for placement in [Placement::None, Placement::Layer(2), Placement::Layer(3), Placement::All] {
        let net = build_network::<f32>(&spec(placement), 1).unwrap();
        let x = Rng::new(2).uniform_tensor(&[4, 3, 32, 32], 0.0, 1.0);
        assert_eq!(net.predict(&x).unwrap().shape(), &[4, 10]);
    }
}

#[test]
fn baseline_parameter_count_by_hand() {
    // stem 432+32, layer1 2·(2·2304+64), layer2 (4608+9216+128+512+64)+(2·9216+128),
    // layer3 (18432+36864+256+2048+128)+(2·36864+256), fc 640+10.
    let net = build_network::<f64>(&spec(Placement::None), 0).unwrap();
    assert_eq!(net.params.trainable_count(), 175_258);
    assert_eq!(spec(Placement::None).param_count(), 175_258);
}

#[test]
fn formula_matches_every_configuration() {
    for placement in [Placement::None, Placement::Layer(2), Placement::Layer(3), Placement::All] {
        for variant in [WaVariant::Stride, WaVariant::OneByOne] {
            for widths in [vec![16, 32, 64], vec![4, 8], vec![5, 5, 7]] {
                for blocks in [1, 2, 3] {
                    let s = NetworkSpec { stage_widths: widths.clone(), blocks_per_stage: blocks, placement, variant, ..NetworkSpec::default() };
                    if s.validate().is_err() {
                        continue;
                    }
                    assert_eq!(build_network::<f64>(&s, 0).unwrap().params.trainable_count(), s.param_count());
                }
            }
        }
    }
}

#[test]
fn layer3_placement_only_changes_stage3_first_block() {
    let base = build_network::<f64>(&spec(Placement::None), 7).unwrap();
    let wa = build_network::<f64>(&spec(Placement::Layer(3)), 7).unwrap();
    let (d0, d1) = (base.describe(), wa.describe());
    assert_eq!(d0.len(), d1.len());
    let differing: Vec<&str> = d0.iter().zip(&d1).filter(|(a, b)| a != b).map(|(a, _)| a.as_str()).collect();
    assert_eq!(differing.len(), 1);
    assert!(differing[0].starts_with("layer3.0:"));
    assert!(d1.iter().any(|l| l.starts_with("layer3.0: wa[haar]+conv3x3(32→64,s1)") && l.contains("+ ll conv1x1")));
    // Stages 1 and 2 hold identical tensors under identical names.
    for (_, p) in base.params.iter().filter(|(_, p)| !p.name.starts_with("layer3") && !p.name.starts_with("fc")) {
        let other = wa.params.value(wa.params.id(&p.name).unwrap());
        assert_eq!(&p.value, other, "{}", p.name);
    }
    // Same conv count: the WA head takes the place of the stride-2 conv.
    let convs = |n: &Network<f64>| n.params.iter().filter(|(_, p)| p.value.rank() == 4).count();
    assert_eq!(convs(&base), convs(&wa));
}

#[test]
fn spec_errors() {
    let two = NetworkSpec { stage_widths: vec![8, 16], placement: Placement::Layer(3), ..NetworkSpec::default() };
    assert!(matches!(build_network::<f64>(&two, 0), Err(Error::Config(_))));
    assert!(matches!("layer1".parse::<Placement>(), Err(Error::Config(_))));
    assert!("layer9x".parse::<Placement>().is_err());
    assert_eq!("layer3".parse::<Placement>().unwrap(), Placement::Layer(3));
    let plain = NetworkSpec { placement: Placement::All, variant: WaVariant::Plain, ..NetworkSpec::default() };
    assert!(plain.validate().is_err());
    let flat = NetworkSpec { stage_widths: vec![4, 4], placement: Placement::All, variant: WaVariant::Plain, ..NetworkSpec::default() };
    let net = build_network::<f64>(&flat, 0).unwrap();
    assert_eq!(net.params.trainable_count(), flat.param_count());
    assert_eq!(net.predict(&Tensor::zeros(&[1, 3, 8, 8]).unwrap()).unwrap().shape(), &[1, 10]);
}

#[test]
fn eval_forward_is_per_sample() {
    let net = build_network::<f32>(&spec(Placement::Layer(2)), 3).unwrap();
    let x = Rng::new(4).uniform_tensor::<f32>(&[3, 3, 16, 16], 0.0, 1.0);
    let all = net.predict(&x).unwrap();
    for i in 0..3 {
        let xi = Tensor::new(&[1, 3, 16, 16], x.data()[i * 768..(i + 1) * 768].to_vec()).unwrap();
        let one = net.predict(&xi).unwrap();
        assert_eq!(one.data(), &all.data()[i * 10..(i + 1) * 10]);
    }
    assert_eq!(net.predict(&x).unwrap(), all);
}

#[test]
fn checkpoint_round_trip_gives_identical_logits() {
    let mut net = build_network::<f32>(&spec(Placement::Layer(3)), 5).unwrap();
    // Move running stats off their defaults first.
    let x = Rng::new(6).uniform_tensor::<f32>(&[4, 3, 32, 32], 0.0, 1.0);
    let mut g = Graph::new();
    let b = net.params.bind(&mut g);
    let xi = g.input(x.clone());
    let out = net.forward(&mut g, &b, xi, Mode::Train).unwrap();
    net.apply_bn_updates(&out.bn_updates, BN_MOMENTUM);
    let before = net.predict(&x).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ck");
    checkpoint::save(&path, &net.state()).unwrap();
    let mut fresh = build_network::<f32>(&spec(Placement::Layer(3)), 99).unwrap();
    let entries = checkpoint::load(&path).unwrap();
    fresh.load_state(entries.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
    let after = fresh.predict(&x).unwrap();
    assert!(before.data().iter().zip(after.data()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let partial: Vec<_> = entries.iter().skip(1).map(|(n, t)| (n.as_str(), t)).collect();
    assert!(matches!(fresh.load_state(partial), Err(Error::Format(_))));
}

/// First input (over derived seeds) whose relu inputs all stay at least 1e-3 from zero.
fn kink_free_input(net: &Network<f64>, seed: u64, mode: Mode) -> Tensor<f64> {
    (0..500)
        .map(|k| Rng::derive(seed, 100, k).uniform_tensor::<f64>(&[2, 3, 8, 8], -1.0, 1.0))
        .find(|x| {
            let mut g = Graph::new();
            let b = net.params.bind(&mut g);
            let xi = g.input(x.clone());
            net.forward(&mut g, &b, xi, mode).unwrap();
            g.kink_margin().unwrap() > 1e-3
        })
        .expect("a kink-free input among 500 candidates")
}

fn end_to_end_gradcheck(spec: &NetworkSpec, seed: u64, mode: Mode) -> f64 {
    let net = build_network::<f64>(spec, seed).unwrap();
    let x = kink_free_input(&net, seed, mode);
    let trainable: Vec<ParamId> = net.params.iter().filter(|(_, p)| p.kind.trainable()).map(|(id, _)| id).collect();
    let mut inputs = vec![x];
    inputs.extend(trainable.iter().map(|&id| net.params.value(id).clone()));
    let r = gradcheck_many(
        |g, ids| {
            let mut nodes = vec![None; net.params.len()];
            for (k, &id) in trainable.iter().enumerate() {
                nodes[id.index()] = Some(ids[k + 1]);
            }
            let out = net.forward(g, &Bound::from_nodes(nodes), ids[0], mode)?;
            cross_entropy(g, out.logits, &[1, 2])
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    r.max_rel_error
}

#[test]
fn whole_network_gradients() {
    for placement in [Placement::None, Placement::Layer(2), Placement::Layer(3), Placement::All] {
        for variant in [WaVariant::Stride, WaVariant::OneByOne] {
            for seed in 0..3 {
                let err = end_to_end_gradcheck(&tiny(placement, variant), 11 + seed, Mode::Train);
                assert!(err < 1e-4, "{placement} {variant} seed {seed}: {err}");
            }
        }
    }
    let plain = NetworkSpec { stage_widths: vec![2, 2, 2], ..tiny(Placement::All, WaVariant::Plain) };
    assert!(end_to_end_gradcheck(&plain, 12, Mode::Train) < 1e-4);
    assert!(end_to_end_gradcheck(&tiny(Placement::Layer(3), WaVariant::Stride), 13, Mode::Eval) < 1e-4);
    let db2 = NetworkSpec { wavelet: Wavelet::Db2, ..tiny(Placement::All, WaVariant::Stride) };
    assert!(end_to_end_gradcheck(&db2, 14, Mode::Train) < 1e-4);
}
