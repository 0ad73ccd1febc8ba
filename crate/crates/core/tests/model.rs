use pathosr_core::model::{Critic, CriticSpec, Generator, GeneratorSpec};
use pathosr_core::{Image, LinearScale};
use proptest::prelude::*;

fn tiny(scale: u32) -> GeneratorSpec {
    GeneratorSpec {
        n_rrdb_blocks: 1,
        base_channels: 4,
        growth_channels: 4,
        linear_scale: LinearScale::new(scale).unwrap(),
        ..Default::default()
    }
}

fn conv(cin: usize, cout: usize) -> usize {
    cin * cout * 9 + cout
}

/// Parameter count of an RRDB network derived layer by layer.
fn rrdb_parameter_count(nf: usize, gc: usize, blocks: usize, upsample_stages: &[usize]) -> usize {
    let rdb: usize = (0..5).map(|k| conv(nf + k * gc, if k < 4 { gc } else { nf })).sum();
    let up: usize = upsample_stages.iter().map(|r| conv(nf, nf * r * r)).sum();
    conv(3, nf) + blocks * 3 * rdb + conv(nf, nf) + up + conv(nf, nf) + conv(nf, 3)
}

#[test]
fn default_generator_parameter_count() {
    let g = Generator::<f32>::new(&GeneratorSpec::default(), 0).unwrap();
    assert_eq!(g.parameter_count(), rrdb_parameter_count(64, 32, 8, &[2, 2]));
    let g8 = Generator::<f32>::new(&tiny(8), 0).unwrap();
    assert_eq!(g8.parameter_count(), rrdb_parameter_count(4, 4, 1, &[2, 2, 2]));
    let g3 = Generator::<f32>::new(&tiny(3), 0).unwrap();
    assert_eq!(g3.parameter_count(), rrdb_parameter_count(4, 4, 1, &[3]));
}

#[test]
fn initialization_is_seeded() {
    let a = Generator::<f32>::new(&tiny(2), 11).unwrap();
    let b = Generator::<f32>::new(&tiny(2), 11).unwrap();
    let c = Generator::<f32>::new(&tiny(2), 12).unwrap();
    assert_eq!(a.params().fingerprint(), b.params().fingerprint());
    assert_ne!(a.params().fingerprint(), c.params().fingerprint());
}

#[test]
fn tiled_inference_matches_whole_image() {
    let g = Generator::<f32>::new(&tiny(2), 3).unwrap();
    let lr = Image::from_fn(21, 18, 3, |r, c, ch| ((r * 7 + c * 3 + ch * 5) % 11) as f32 / 10.0).unwrap();
    let whole = g.super_resolve(&lr, 64, 0).unwrap();
    let tiled = g.super_resolve(&lr, 8, 24).unwrap();
    let diff = whole
        .data()
        .iter()
        .zip(tiled.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(diff < 1e-5, "max difference {diff}");
}

#[test]
fn channel_mismatch_is_a_shape_error() {
    let g = Generator::<f32>::new(&tiny(2), 3).unwrap();
    let gray = Image::filled(8, 8, 1, 0.5).unwrap();
    assert!(matches!(g.super_resolve(&gray, 64, 0), Err(pathosr_core::Error::Shape(_))));
}

#[test]
fn critic_maps_batches_to_scores() {
    let spec = CriticSpec::vgg_style(128, 64);
    assert_eq!(spec.total_stride(), 32);
    let small = CriticSpec::vgg_style(32, 4);
    let c = Critic::<f32>::new(&small, 0).unwrap();
    let x = Image::batch_to_tensor::<f32>(&[&Image::filled(32, 32, 3, 0.1).unwrap(), &Image::filled(32, 32, 3, 0.9).unwrap()])
        .unwrap();
    assert_eq!(c.scores(&x).unwrap().len(), 2);
    let bad = CriticSpec { input_size: 30, ..small };
    assert!(Critic::<f32>::new(&bad, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn output_is_scale_times_input(h in 1usize..20, w in 1usize..20, si in 0usize..4) {
        let s = LinearScale::SUPPORTED[si];
        let g = Generator::<f32>::new(&tiny(s), 1).unwrap();
        let lr = Image::filled(w, h, 3, 0.4).unwrap();
        let sr = g.super_resolve_batch(&[&lr]).unwrap().remove(0);
        prop_assert_eq!((sr.height(), sr.width()), (h * s as usize, w * s as usize));
    }
}
