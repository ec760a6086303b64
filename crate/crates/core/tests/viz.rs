mod common;

use common::dense_reverse_field;
use salseg::net::{Architecture, DecoderMode, Head, Layer, LayerKind, LayerSpec, Network, Tensor};
use salseg::viz::{field_radius, reverse_field, stage_layer, visualize_grid, visualize_neuron};

fn encoder(widths: Vec<usize>, convs: usize, seed: u64) -> Network {
    let arch = Architecture {
        stage_widths: widths,
        convs_per_stage: convs,
        kernel: 3,
    };
    Network::init(arch.layer_specs(1, DecoderMode::Unpool, Head::Classes(3)), seed).unwrap()
}

fn pools_below(net: &Network, top: usize) -> usize {
    net.layers()[..=top].iter().filter(|l| l.spec.kind == LayerKind::MaxPool).count()
}

#[test]
fn matches_dense_operator_on_two_stages() {
    for seed in 0..4 {
        let net = encoder(vec![3, 4], 2, seed);
        for stage in 1..=2 {
            let top = stage_layer(&net, stage).unwrap();
            let scale = 1 << pools_below(&net, top);
            let width = net.layers()[top].spec.out_channels;
            for ch in 0..width {
                let (field, anchor) = reverse_field(&net, top, ch).unwrap();
                let m = anchor / scale;
                let dense = dense_reverse_field(&net, top, ch, 2 * m + 1, m);
                assert_eq!(dense.len(), field.raw.len());
                for (a, b) in field.raw.iter().zip(&dense) {
                    assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "stage {stage} ch {ch}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn support_stays_within_radius() {
    let net = encoder(vec![4, 4], 2, 7);
    for stage in 1..=2 {
        let top = stage_layer(&net, stage).unwrap();
        let r = field_radius(&net, top).unwrap() as isize;
        for ch in 0..4 {
            let (f, anchor) = reverse_field(&net, top, ch).unwrap();
            let a = anchor as isize;
            for y in 0..f.height {
                for x in 0..f.width {
                    let v = f.raw[y * f.width + x];
                    if v != 0.0 {
                        assert!((x as isize - a).abs() <= r && (y as isize - a).abs() <= r);
                    }
                }
            }
        }
    }
}

#[test]
fn scaling_kernels_scales_raw_field() {
    let net = encoder(vec![3, 3], 1, 11);
    let mut scaled = net.clone();
    let first_conv = scaled.layers().iter().position(|l| l.spec.kind == LayerKind::Conv).unwrap();
    for w in scaled.layers_mut()[first_conv].weight.data_mut() {
        *w *= 2.5;
    }
    for ch in 0..3 {
        let a = visualize_neuron(&net, 2, ch).unwrap();
        let b = visualize_neuron(&scaled, 2, ch).unwrap();
        for (x, y) in a.raw.iter().zip(&b.raw) {
            assert!((2.5 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
        // the normalized picture is unchanged
        for (x, y) in a.normalized().iter().zip(&b.normalized()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn positive_kernel_lands_around_anchor_after_pool() {
    // one conv, one pool: the field is the kernel laid around the anchor
    let w: Vec<f64> = (1..=9).map(f64::from).collect();
    let net = Network::from_layers(vec![
        Layer {
            spec: LayerSpec::conv(1, 1, 3),
            weight: Tensor::from_vec(&[1, 1, 3, 3], w.clone()).unwrap(),
            bias: vec![0.0],
        },
        Layer {
            spec: LayerSpec::relu(1),
            weight: Tensor::zeros(&[0]),
            bias: vec![],
        },
        Layer {
            spec: LayerSpec::maxpool(1),
            weight: Tensor::zeros(&[0]),
            bias: vec![],
        },
    ])
    .unwrap();
    let (f, anchor) = reverse_field(&net, 2, 0).unwrap();
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            let x = (anchor as isize + dx) as usize;
            let y = (anchor as isize + dy) as usize;
            assert_eq!(f.raw[y * f.width + x], w[((dy + 1) * 3 + dx + 1) as usize]);
        }
    }
    assert_eq!(f.raw.iter().filter(|&&v| v != 0.0).count(), 9);
}

#[test]
fn partial_grid_pads_with_black_cells() {
    let net = encoder(vec![5, 4], 1, 3);
    let g = visualize_grid(&net, 1, 5).unwrap();
    let tile = visualize_neuron(&net, 1, 0).unwrap();
    // 5 fields -> 3 columns, 2 rows
    assert_eq!(g.width, 3 * tile.width + 2);
    assert_eq!(g.height, 2 * tile.height + 1);
    let last_cell_x = 2 * (tile.width + 1);
    let last_cell_y = tile.height + 1;
    for y in 0..tile.height {
        for x in 0..tile.width {
            assert_eq!(g.pixels[(last_cell_y + y) * g.width + last_cell_x + x], 0);
        }
    }
    // separators are white
    for y in 0..g.height {
        assert_eq!(g.pixels[y * g.width + tile.width], 255);
    }
}
