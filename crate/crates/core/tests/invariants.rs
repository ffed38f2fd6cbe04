use platoon_core::config::paper_s5;
use platoon_core::controller::{barrier_psi, saturate, TrainPairErrors};
use platoon_core::faults::fault_value;
use platoon_core::integrator::rk4_step;
use platoon_core::model::{
    composite_rhs, coupling_force, plant_acceleration, preliminary_control, traction_for_acceleration, CarriageParams,
};
use platoon_core::observer::{auxiliary_inputs, ObserverGains, ObserverState};
use platoon_core::reference::Reference;
use proptest::prelude::*;

fn params() -> (CarriageParams, platoon_core::model::DavisCoefficients, platoon_core::model::CouplerParams) {
    let c = paper_s5();
    (c.trains[0].carriages[1].params.clone(), c.davis, c.coupler)
}

fn consist(base: f64, offsets: [f64; 3], speeds: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    ([base + offsets[0], base - 26.0 + offsets[1], base - 52.0 + offsets[2]], speeds)
}

proptest! {
    #[test]
    fn coupling_forces_cancel_within_a_train(
        base in 0.0f64..2e4,
        offsets in prop::array::uniform3(-2.0f64..2.0),
        speeds in prop::array::uniform3(0.0f64..90.0),
    ) {
        let (_, _, coupler) = params();
        let (x, v) = consist(base, offsets, speeds);
        let total: f64 = (0..3).map(|j| coupling_force(j, &x, &v, &coupler).unwrap()).sum();
        prop_assert!(total.abs() < 1e-6 * coupler.stiffness.max(1.0), "{total}");
    }

    #[test]
    fn traction_and_acceleration_invert(
        base in 0.0f64..2e4,
        offsets in prop::array::uniform3(-2.0f64..2.0),
        speeds in prop::array::uniform3(0.0f64..90.0),
        w in -2.0f64..2.0,
        j in 0usize..3,
    ) {
        let (p, davis, coupler) = params();
        let (x, v) = consist(base, offsets, speeds);
        let tau = traction_for_acceleration(j, w, &x, &v, &p, &davis, &coupler).unwrap();
        let back = plant_acceleration(j, tau, &x, &v, &p, &davis, &coupler).unwrap();
        prop_assert!((back - w).abs() < 1e-9, "{back} vs {w}");
    }

    /// The composite jerk equals the time derivative of the plant
    /// acceleration along the plant flow under the preliminary control.
    #[test]
    fn composite_jerk_matches_plant_flow(
        base in 0.0f64..2e4,
        offsets in prop::array::uniform3(-2.0f64..2.0),
        speeds in prop::array::uniform3(5.0f64..90.0),
        accel in prop::array::uniform3(-1.0f64..1.0),
        u in -1.0f64..1.0,
        f_accel in -0.5f64..0.5,
        j in 0usize..3,
    ) {
        let (p, davis, coupler) = params();
        let (x, v) = consist(base, offsets, speeds);
        let taus: Vec<f64> =
            (0..3).map(|k| traction_for_acceleration(k, accel[k], &x, &v, &p, &davis, &coupler).unwrap()).collect();
        let varpi = preliminary_control(u, j, &x, &v, &p, &davis, &coupler).unwrap();
        let tau_dot = -p.actuator_rate * taus[j] + varpi + f_accel * p.mass;
        // d/dt of (tau - B - m R(v)) / m by central differences along the flow
        let h = 1e-5;
        let at = |s: f64| {
            let xs: Vec<f64> = (0..3).map(|k| x[k] + s * v[k] + 0.5 * s * s * accel[k]).collect();
            let vs: Vec<f64> = (0..3).map(|k| v[k] + s * accel[k]).collect();
            plant_acceleration(j, taus[j] + s * tau_dot, &xs, &vs, &p, &davis, &coupler).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let jerk = composite_rhs(j, &v, &accel, f_accel, u, &p, &davis, &coupler).unwrap()[2];
        prop_assert!((fd - jerk).abs() < 1e-5 * jerk.abs().max(1.0), "{fd} vs {jerk}");
    }

    #[test]
    fn exact_estimates_need_no_correction(
        base in 0.0f64..2e4,
        offsets in prop::array::uniform3(-2.0f64..2.0),
        speeds in prop::array::uniform3(1.0f64..90.0),
        accel in prop::array::uniform3(-1.0f64..1.0),
        fault in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let (p, davis, coupler) = params();
        let (x, v) = consist(base, offsets, speeds);
        let gains = vec![ObserverGains { k1: 3.0, k: [-15.0, -89.0, -97.2, 126.4, -4.8] }; 3];
        let est: Vec<ObserverState> = (0..3).map(|k| ObserverState { x: x[k], v: v[k], w: accel[k], f: fault }).collect();
        let carriages = vec![p; 3];
        let aux = auxiliary_inputs(&carriages, &davis, &coupler, &gains, &x, &v, &est).unwrap();
        for a in aux {
            prop_assert_eq!(a.mu1, 0.0);
            prop_assert_eq!(a.mu2, 0.0);
            prop_assert_eq!(a.mu3, 0.0);
            prop_assert_eq!(a.mu4, [0.0; 3]);
        }
    }

    #[test]
    fn fault_follows_its_exosystem(t in 500.0f64..1300.0, k in 0usize..9) {
        let c = paper_s5();
        let model = &c.carriages().nth(k).unwrap().params.fault;
        let s = model.exosystem();
        let h = 1e-5;
        let (a, b) = (fault_value(t + h, model), fault_value(t - h, model));
        let f = nalgebra::Vector3::from(fault_value(t, model));
        let rate = s * f;
        for i in 0..3 {
            prop_assert!(((a[i] - b[i]) / (2.0 * h) - rate[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn saturation_lands_inside(value in -1e4f64..1e4, lower in 1.0f64..100.0, upper in 1.0f64..100.0) {
        let (s, clamped) = saturate(value, lower, upper);
        prop_assert!(s > -lower && s < upper);
        prop_assert_eq!(clamped, !(value > -lower && value < upper));
        prop_assert!(barrier_psi(s, upper, lower).is_ok());
    }

    #[test]
    fn combined_error_is_consistent(
        front in (0.0f64..2e4, 0.0f64..90.0),
        head in (0.0f64..2e4, 0.0f64..90.0),
        ell1 in 0.0f64..0.02,
    ) {
        let p = TrainPairErrors::new(front, head, 7053.0, ell1);
        prop_assert!((p.x_tilde - (front.0 - head.0 - 7053.0)).abs() < 1e-9);
        prop_assert!((p.epsilon - (front.0 - head.0)).abs() < 1e-9);
        prop_assert!((p.v_tilde - (front.1 - head.1)).abs() < 1e-12);
        prop_assert!((p.q_tilde - (p.v_tilde + ell1 * p.x_tilde)).abs() < 1e-9);
    }

    #[test]
    fn reference_is_smooth_and_bounded(t in 0.0f64..2399.0) {
        let r = Reference::new(paper_s5().reference).unwrap();
        let (a, b) = (r.evaluate(t).unwrap(), r.evaluate(t + 1e-3).unwrap());
        prop_assert!(a.v >= 0.0 && a.v <= r.max_velocity() + 1e-9);
        prop_assert!((b.x - a.x - 1e-3 * a.v).abs() < 1e-3 * 1e-3 * 2.0);
        prop_assert!((b.v - a.v).abs() < 1e-3 * 1.0);
    }

    #[test]
    fn rk4_matches_its_polynomial(lambda in -5.0f64..0.5, h in 1e-3f64..0.2, y0 in -10.0f64..10.0) {
        let y = rk4_step(|_, y: &[f64]| vec![lambda * y[0]], 0.0, &[y0], h).unwrap();
        let z = lambda * h;
        let expected = y0 * (1.0 + z + z * z / 2.0 + z.powi(3) / 6.0 + z.powi(4) / 24.0);
        prop_assert!((y[0] - expected).abs() < 1e-12 * y0.abs().max(1.0));
    }
}
