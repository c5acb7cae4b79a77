use super::*;
use crate::descriptors::ColorStats;
use crate::graph_build::{MatchGraph, Node};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

fn node(x: f64, y: f64, descriptor: Vec<f32>, color: [f64; 6]) -> Node {
    Node {
        centroid: (x, y),
        descriptor,
        color: ColorStats {
            mean: [color[0], color[1], color[2]],
            std: [color[3], color[4], color[5]],
        },
        superpixel: 0,
    }
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> MatchGraph {
    let nodes = (0..n)
        .map(|_| {
            let d: Vec<f32> = (0..8).map(|_| rng.random_range(0.0..0.3)).collect();
            let c: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..0.2));
            node(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0), d, c)
        })
        .collect();
    MatchGraph::from_nodes(nodes).unwrap()
}

/// `G2` = `G1` with nodes permuted, attributes lightly perturbed and
/// positions moved by `motion`.
fn perturbed_copy(
    rng: &mut ChaCha8Rng,
    g: &MatchGraph,
    perm: &[usize],
    noise: f32,
    motion: impl Fn((f64, f64)) -> (f64, f64),
) -> MatchGraph {
    let mut nodes = vec![g.nodes[0].clone(); g.node_count()];
    for (i, &k) in perm.iter().enumerate() {
        let mut n = g.nodes[i].clone();
        for v in &mut n.descriptor {
            *v = (*v + rng.random_range(-noise..=noise)).max(0.0);
        }
        n.centroid = motion(n.centroid);
        nodes[k] = n;
    }
    MatchGraph::from_nodes(nodes).unwrap()
}

fn explicit_k(g1: &MatchGraph, g2: &MatchGraph) -> Vec<f64> {
    let (n1, n2) = (g1.node_count(), g2.node_count());
    let d = n1 * n2;
    let mut k = vec![0.0; d * d];
    for i in 0..n1 {
        for kk in 0..n2 {
            for j in 0..n1 {
                for l in 0..n2 {
                    k[(i * n2 + kk) * d + j * n2 + l] = affinity_element(g1, g2, i, j, kk, l).unwrap();
                }
            }
        }
    }
    k
}

fn quad(k: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    (0..d)
        .map(|r| x[r] * (0..d).map(|c| k[r * d + c] * x[c]).sum::<f64>())
        .sum()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn node_affinity_examples() {
    let a = node(0.0, 0.0, vec![1.0, 0.0], [0.0; 6]);
    let b = node(0.0, 0.0, vec![0.0, 1.0], [0.0; 6]);
    assert_eq!(node_affinity(&a, &a).unwrap(), 1.0);
    assert!((node_affinity(&a, &b).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
    assert!((node_affinity(&a, &b).unwrap() - 0.13534).abs() < 1e-5);
}

#[test]
fn edge_affinity_examples() {
    let p = node(0.0, 0.0, vec![0.2, 0.1], [0.1, 0.2, 0.3, 0.0, 0.0, 0.0]);
    let q = node(3.0, 0.0, vec![0.0, 0.4], [0.3, 0.2, 0.1, 0.1, 0.0, 0.0]);
    assert_eq!(edge_affinity(&p, &q, &p, &q, 0.3, 0.3, 5.0, 5.0).unwrap(), 1.0);
    let v = edge_affinity(&p, &q, &p, &q, 0.0, FRAC_PI_2, 5.0, 5.0).unwrap();
    assert!((v - (-FRAC_PI_4).exp()).abs() < 1e-15);
    assert!((angle_difference(0.1, 3.0) - (std::f64::consts::PI - 2.9)).abs() < 1e-15);
    assert_eq!(length_difference(2.0, 6.0), 1.0);
}

#[test]
fn edge_affinity_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let l1 = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum::<f64>();
    let c1 = |a: &Node, b: &Node| {
        let (u, v) = (a.color.as_vector(), b.color.as_vector());
        u.iter().zip(&v).map(|(x, y)| (x - y).abs()).sum::<f64>()
    };
    for _ in 0..50 {
        let g = random_graph(&mut rng, 4);
        let [pi, pj, pk, pl] = [&g.nodes[0], &g.nodes[1], &g.nodes[2], &g.nodes[3]];
        let (ta, tb) = (rng.random_range(0.0..PI), rng.random_range(0.0..PI));
        let (la, lb) = (rng.random_range(1.0..20.0), rng.random_range(1.0..20.0));
        let got = edge_affinity(pi, pj, pk, pl, ta, tb, la, lb).unwrap();
        let mut dth = (ta - tb).abs();
        if dth > FRAC_PI_2 {
            dth = std::f64::consts::PI - dth;
        }
        let phi = l1(&pi.descriptor, &pk.descriptor)
            + l1(&pj.descriptor, &pl.descriptor)
            + (l1(&pi.descriptor, &pj.descriptor) - l1(&pk.descriptor, &pl.descriptor)).abs()
            + c1(pi, pk)
            + c1(pj, pl)
            + (c1(pi, pj) - c1(pk, pl)).abs();
        let want = (-0.5 * (phi + dth + (la - lb).abs() / ((la + lb) / 2.0))).exp();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!(got > 0.0 && got <= 1.0);
        let ng = node_affinity(pi, pk).unwrap();
        assert!((ng - (-l1(&pi.descriptor, &pk.descriptor)).exp()).abs() < 1e-12);
    }
}

#[test]
fn affinity_element_cases_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g1 = random_graph(&mut rng, 5);
    let g2 = random_graph(&mut rng, 6);
    let f = AffinityFactors::new(&g1, &g2).unwrap();
    assert_eq!(
        affinity_element(&g1, &g2, 2, 2, 3, 3).unwrap(),
        node_affinity(&g1.nodes[2], &g2.nodes[3]).unwrap()
    );
    assert_eq!(affinity_element(&g1, &g2, 2, 2, 3, 4).unwrap(), 0.0);
    let (a, b) = (g1.edges[0], g2.edges[0]);
    let e = affinity_element(&g1, &g2, a.a, a.b, b.a, b.b).unwrap();
    assert_eq!(e, symmetric_edge_affinity(&g1, &a, &g2, &b).unwrap());
    assert!(e > 0.0);
    for i in 0..5 {
        for j in 0..5 {
            for k in 0..6 {
                for l in 0..6 {
                    let v = affinity_element(&g1, &g2, i, j, k, l).unwrap();
                    assert_eq!(v, affinity_element(&g1, &g2, j, i, l, k).unwrap());
                    assert!((v - f.element(i, j, k, l)).abs() < 1e-12);
                }
            }
        }
    }
    assert!(affinity_element(&g1, &g2, 5, 0, 0, 0).is_err());
}

#[test]
fn factor_objective_equals_explicit_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let n1 = rng.random_range(2..=6);
        let n2 = rng.random_range(2..=(36 / n1).min(6));
        let g1 = random_graph(&mut rng, n1);
        let g2 = random_graph(&mut rng, n2);
        let f = AffinityFactors::new(&g1, &g2).unwrap();
        let k = explicit_k(&g1, &g2);
        let n = n1.max(n2);
        // Partial permutations.
        let mut cols: Vec<usize> = (0..n2).collect();
        for t in (1..n2).rev() {
            cols.swap(t, rng.random_range(0..=t));
        }
        let assign: Vec<Option<usize>> = (0..n1).map(|i| cols.get(i).copied()).collect();
        let mut x = vec![0.0; n1 * n2];
        let mut xp = vec![0.0; n * n];
        for (i, a) in assign.iter().enumerate() {
            if let Some(kk) = a {
                x[i * n2 + kk] = 1.0;
                xp[i * n + kk] = 1.0;
            }
        }
        let want = quad(&k, &x);
        assert!((f.assignment_objective(&assign) - want).abs() < 1e-9);
        assert!((f.relaxed_objective(&xp, n) - want).abs() < 1e-9);
        // Arbitrary continuous matrices through the exact quadratic form.
        let y: Vec<f64> = (0..n1 * n2).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut yp = vec![0.0; n * n];
        for i in 0..n1 {
            yp[i * n..i * n + n2].copy_from_slice(&y[i * n2..(i + 1) * n2]);
        }
        assert!((f.quadratic_form(&yp, n) - quad(&k, &y)).abs() < 1e-9);
    }
}

#[test]
fn permutation_product_matches_dense_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let g1 = random_graph(&mut rng, 9);
    let g2 = random_graph(&mut rng, 7);
    let f = AffinityFactors::new(&g1, &g2).unwrap();
    let n = 9;
    let mut perm: Vec<usize> = (0..n).collect();
    for t in (1..n).rev() {
        perm.swap(t, rng.random_range(0..=t));
    }
    let mut y = vec![0.0; n * n];
    for (i, &k) in perm.iter().enumerate() {
        y[i * n + k] = 1.0;
    }
    let (mut a, mut b) = (vec![0.0; n * n], vec![0.0; n * n]);
    f.apply_pairwise(&y, n, &mut a);
    f.apply_pairwise_permutation(&perm, n, &mut b);
    for (p, q) in a.iter().zip(&b) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn self_match_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = random_graph(&mut rng, 12);
    let params = GraphMatchParams::default();
    let c = path_follow_match(&g, &g, &params).unwrap();
    let identity: Vec<Option<usize>> = (0..12).map(Some).collect();
    assert_eq!(c.discrete, identity);
    let want = 12.0 + 2.0 * g.edge_count() as f64;
    assert!((c.objective - want).abs() < 1e-9);
    assert!(stochastic_error(&c.soft, c.n) < 1e-6);
    assert_eq!(unmatched_nodes(&c, None), Unmatched::default());
}

#[test]
fn path_values_are_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g1 = random_graph(&mut rng, 9);
    let g2 = random_graph(&mut rng, 7);
    let c = path_follow_match(&g1, &g2, &GraphMatchParams::default()).unwrap();
    assert_eq!(c.path_trace.len(), 101);
    for w in c.path_trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-9, "{} then {}", w[0], w[1]);
    }
}

#[test]
fn near_optimal_on_small_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let params = GraphMatchParams::default();
    let mut good = 0;
    let trials = 20;
    for _ in 0..trials {
        let g1 = random_graph(&mut rng, 5);
        let g2 = random_graph(&mut rng, 5);
        let f = AffinityFactors::new(&g1, &g2).unwrap();
        let best = permutations(5)
            .iter()
            .map(|p| f.assignment_objective(&p.iter().map(|&k| Some(k)).collect::<Vec<_>>()))
            .fold(f64::MIN, f64::max);
        let c = path_follow_match(&g1, &g2, &params).unwrap();
        assert!(c.objective <= best + 1e-9);
        if c.objective >= 0.95 * best {
            good += 1;
        }
    }
    assert!(good >= trials * 9 / 10, "{good}/{trials}");
}

#[test]
fn padding_leaves_nodes_unmatched() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g1 = random_graph(&mut rng, 8);
    let g2 = random_graph(&mut rng, 5);
    let c = path_follow_match(&g1, &g2, &GraphMatchParams::default()).unwrap();
    assert_eq!(c.n, 8);
    let un = unmatched_nodes(&c, None);
    assert!(un.first.len() >= 3);
    // Discrete output is a partial permutation.
    let mut seen = std::collections::HashSet::new();
    for k in c.discrete.iter().flatten() {
        assert!(*k < 5 && seen.insert(*k));
    }
    // Reverse direction: the padded columns are never real.
    let c = path_follow_match(&g2, &g1, &GraphMatchParams::default()).unwrap();
    assert!(c.discrete.iter().all(|k| k.is_some()));
}

#[test]
fn uniform_soft_weights_stay_matched() {
    let n = 4;
    let c = Correspondence {
        n1: n,
        n2: n,
        n,
        soft: vec![0.25; n * n],
        discrete: (0..n).map(Some).collect(),
        objective: 0.0,
        path_trace: Vec::new(),
        inner_iterations: 0,
    };
    assert_eq!(unmatched_nodes(&c, None), Unmatched::default());
    let un = unmatched_nodes(&c, Some(0.3));
    assert_eq!(un.first, vec![0, 1, 2, 3]);
    assert_eq!(un.second, vec![0, 1, 2, 3]);
}

#[test]
fn transform_fits() {
    let t = Affine2([1.2, -0.5, 3.0, 0.5, 1.2, -2.0]);
    let pts = [(0.0, 0.0), (10.0, 1.0), (3.0, 7.0), (-4.0, 2.0)];
    let pairs: Vec<_> = pts.iter().map(|&p| (p, t.apply(p), 1.0)).collect();
    for fit in [fit_similarity(&pairs).unwrap(), fit_affine(&pairs).unwrap()] {
        for (a, b) in fit.0.iter().zip(&t.0) {
            assert!((a - b).abs() < 1e-9);
        }
    }
    let inv = t.inverse().unwrap();
    let q = inv.apply(t.apply((2.0, 5.0)));
    assert!((q.0 - 2.0).abs() < 1e-12 && (q.1 - 5.0).abs() < 1e-12);
    let line: Vec<_> = (0..4).map(|i| ((i as f64, 0.0), (i as f64, 1.0), 1.0)).collect();
    assert!(fit_affine(&line).is_err());
}

fn point_graph(rng: &mut ChaCha8Rng, n: usize) -> MatchGraph {
    let nodes = (0..n)
        .map(|_| {
            node(
                rng.random_range(0.0..100.0),
                rng.random_range(0.0..100.0),
                vec![0.5; 4],
                [0.0; 6],
            )
        })
        .collect();
    MatchGraph::from_nodes(nodes).unwrap()
}

fn recovery(motion: impl Fn((f64, f64)) -> (f64, f64), n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g1 = point_graph(&mut rng, n);
    let mut perm: Vec<usize> = (0..n).collect();
    for t in (1..n).rev() {
        perm.swap(t, rng.random_range(0..=t));
    }
    let g2 = perturbed_copy(&mut rng, &g1, &perm, 0.0, motion);
    let m = deformable_match(&g1, &g2, &GraphMatchParams::default()).unwrap();
    let hits = (0..n)
        .filter(|&i| m.correspondence.discrete[i] == Some(perm[i]))
        .count();
    hits as f64 / n as f64
}

#[test]
fn deformable_recovers_rotation_and_scale() {
    let rot = 30f64.to_radians();
    let rotate = move |p: (f64, f64)| {
        let (x, y) = (p.0 - 50.0, p.1 - 50.0);
        (
            50.0 + rot.cos() * x - rot.sin() * y,
            50.0 + rot.sin() * x + rot.cos() * y,
        )
    };
    assert!(recovery(rotate, 20, 1) >= 0.95);
    assert!(recovery(|p| (1.5 * p.0, 1.5 * p.1), 20, 2) >= 0.95);
}

#[test]
fn deformable_without_motion_equals_path_following() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g1 = random_graph(&mut rng, 10);
    let g2 = perturbed_copy(&mut rng, &g1, &(0..10).collect::<Vec<_>>(), 0.0, |p| p);
    let params = GraphMatchParams::default();
    let plain = path_follow_match(&g1, &g2, &params).unwrap();
    let d = deformable_match(&g1, &g2, &params).unwrap();
    assert_eq!(d.correspondence.discrete, plain.discrete);
    assert_eq!(d.correspondence.objective, plain.objective);
}
