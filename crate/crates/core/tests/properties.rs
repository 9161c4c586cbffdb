use bshsplat::bsh::{sym_index, BshMatrix, BSH_PACKED};
use bshsplat::relight::{relight_scene, ComponentMask};
use bshsplat::scene::{LightSource, Primitive, Scene};
use bshsplat::sh::{eval_sh_basis, Direction, SH_COUNT};
use proptest::prelude::*;

fn dir() -> impl Strategy<Value = Direction<f64>> {
    prop::array::uniform3(-1.0f64..1.0)
        .prop_filter("non-degenerate", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
        .prop_map(|v| Direction::from_array(v).unwrap())
}

fn bsh() -> impl Strategy<Value = BshMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, 3 * BSH_PACKED).prop_map(|v| {
        let mut s = BshMatrix::zeros();
        for (k, x) in v.into_iter().enumerate() {
            s.coeffs[k / BSH_PACKED][k % BSH_PACKED] = x;
        }
        s
    })
}

fn rgb() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(0.0f64..4.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn directions_are_unit(d in dir()) {
        let [x, y, z] = d.as_array();
        prop_assert!(((x * x + y * y + z * z).sqrt() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn band_energy_is_rotation_invariant(d in dir()) {
        // Sum of squares within band l equals (2l + 1) / (4 pi) everywhere.
        let y = eval_sh_basis(&d);
        for l in 0..5usize {
            let e: f64 = (l * l..(l + 1) * (l + 1)).map(|i| y[i] * y[i]).sum();
            let want = (2 * l + 1) as f64 / (4.0 * std::f64::consts::PI);
            prop_assert!((e - want).abs() <= 1e-12 * want.max(1.0), "band {} energy {} vs {}", l, e, want);
        }
    }

    #[test]
    fn packed_index_is_symmetric_and_dense(i in 0..SH_COUNT, j in 0..SH_COUNT) {
        let k = sym_index(i, j).unwrap();
        prop_assert_eq!(k, sym_index(j, i).unwrap());
        prop_assert!(k < BSH_PACKED);
    }

    #[test]
    fn scattering_is_reciprocal(s in bsh(), wi in dir(), wo in dir()) {
        let (a, b) = (s.eval(&wi, &wo), s.eval(&wo, &wi));
        for c in 0..3 {
            prop_assert!((a[c] - b[c]).abs() <= 1e-12 * a[c].abs().max(1.0));
        }
    }

    #[test]
    fn relighting_is_additive_across_lights(
        s in bsh(), d1 in dir(), d2 in dir(), l1 in rgb(), l2 in rgb(), scale in 0.0f64..3.0
    ) {
        let mut p = Primitive::<f64>::default();
        p.s = s;
        let scene = Scene::new(vec![p]);
        let a = LightSource::directional(d1, l1).unwrap();
        let b = LightSource::directional(d2, l2).unwrap();
        let scaled = LightSource::directional(d1, l1.map(|v| v * scale)).unwrap();
        let ra = relight_scene(&scene, &[a.clone()], ComponentMask::FULL).unwrap()[0];
        let rb = relight_scene(&scene, &[b.clone()], ComponentMask::FULL).unwrap()[0];
        let rab = relight_scene(&scene, &[a, b], ComponentMask::FULL).unwrap()[0];
        let rs = relight_scene(&scene, &[scaled], ComponentMask::FULL).unwrap()[0];
        for c in 0..3 {
            for k in 0..SH_COUNT {
                let sum = ra.sh[c].0[k] + rb.sh[c].0[k];
                prop_assert!((rab.sh[c].0[k] - sum).abs() <= 1e-9 * sum.abs().max(1.0));
                let lin = ra.sh[c].0[k] * scale;
                prop_assert!((rs.sh[c].0[k] - lin).abs() <= 1e-9 * lin.abs().max(1.0));
            }
        }
    }

    #[test]
    fn masked_components_superpose(s in bsh(), d in dir(), l in rgb()) {
        let mut p = Primitive::<f64>::default();
        p.s = s;
        let scene = Scene::new(vec![p]);
        let light = [LightSource::directional(d, l).unwrap()];
        let get = |m| relight_scene(&scene, &light, m).unwrap()[0];
        let full = get(ComponentMask::FULL);
        let parts = [get(ComponentMask::DIFFUSE), get(ComponentMask::DIRECTIONAL), get(ComponentMask::INDIRECT)];
        for c in 0..3 {
            for k in 0..SH_COUNT {
                let sum: f64 = parts.iter().map(|r| r.sh[c].0[k]).sum();
                prop_assert!((full.sh[c].0[k] - sum).abs() <= 1e-12 * sum.abs().max(1.0));
            }
        }
    }
}
