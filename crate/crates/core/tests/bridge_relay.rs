mod common;

use std::sync::Arc;

use proptest::prelude::*;

use adcosim_core::bridge::{
    chassis_a_to_b, chassis_b_to_a, control_a_to_b, control_b_to_a, convert_localization, Bridge, BridgeConfig, ConversionParams,
};
use adcosim_core::bus::Bus;
use adcosim_core::message::{MessageEnvelope, Payload};
use adcosim_core::topics::*;
use common::*;

const PARAMS: ConversionParams = ConversionParams { max_steer_angle: 0.52 };

/// Source topic, destination channel, source payload, expected destination payload.
fn item() -> impl Strategy<Value = (&'static str, &'static str, Payload, Payload)> {
    prop_oneof![
        startup().prop_map(|m| (CM_STARTUP, APOLLO_STARTUP, Payload::Startup(m.clone()), Payload::Startup(m))),
        localization_a().prop_map(|m| {
            let want = Payload::LocalizationB(convert_localization(&m));
            (CM_LOCALIZATION, APOLLO_LOCALIZATION, Payload::LocalizationA(m), want)
        }),
        chassis_a().prop_map(|m| {
            let want = Payload::ChassisB(chassis_a_to_b(&m, &PARAMS));
            (CM_CHASSIS, APOLLO_CHASSIS, Payload::ChassisA(m), want)
        }),
        objects().prop_map(|m| (CM_OBJECTS, APOLLO_OBSTACLES, Payload::Objects(m.clone()), Payload::Objects(m))),
        control_b().prop_map(|m| {
            let want = Payload::ControlA(control_b_to_a(&m, &PARAMS));
            (APOLLO_CONTROL, CM_CONTROL, Payload::ControlB(m), want)
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn every_message_is_relayed_once_in_order(items in proptest::collection::vec(item(), 0..200)) {
        let bus_a = Bus::with_topics(&dynamics_topics()).unwrap();
        let bus_b = Bus::with_topics(&ads_topics()).unwrap();
        let mut bridge = Bridge::new(BridgeConfig::default_config(), Arc::new(bus_a.clone()), Arc::new(bus_b.clone())).unwrap();
        bridge.start().unwrap();
        let dest_b = bus_b.subscribe_queue(&[APOLLO_STARTUP, APOLLO_LOCALIZATION, APOLLO_CHASSIS, APOLLO_OBSTACLES]).unwrap();
        let dest_a = bus_a.subscribe_queue(&[CM_CONTROL]).unwrap();

        for (k, (src, _, payload, _)) in items.iter().enumerate() {
            let bus = if *src == APOLLO_CONTROL { &bus_b } else { &bus_a };
            bus.publish(src, MessageEnvelope::new("", k as f64 * 0.01, payload.clone())).unwrap();
        }
        let got: Vec<MessageEnvelope> = dest_b.drain().into_iter().chain(dest_a.drain()).collect();
        prop_assert_eq!(got.len(), items.len());
        prop_assert_eq!(bridge.relay_log().len(), items.len());

        for channel in [APOLLO_STARTUP, APOLLO_LOCALIZATION, APOLLO_CHASSIS, APOLLO_OBSTACLES, CM_CONTROL] {
            let want: Vec<&Payload> = items.iter().filter(|i| i.1 == channel).map(|i| &i.3).collect();
            let have: Vec<&MessageEnvelope> = got.iter().filter(|e| e.channel == channel).collect();
            prop_assert_eq!(have.len(), want.len(), "{}", channel);
            for (n, (h, w)) in have.iter().zip(&want).enumerate() {
                prop_assert_eq!(&h.payload, *w);
                prop_assert_eq!(h.seq, n as u64 + 1);
            }
        }
        prop_assert!(bridge.errors().is_empty());
    }

    #[test]
    fn unit_round_trip(c in control_a(), ch in chassis_a()) {
        let back = control_b_to_a(&control_a_to_b(&c, &PARAMS), &PARAMS);
        prop_assert!((back.steering_angle - c.steering_angle).abs() < 1e-9);
        prop_assert!((back.steering_rate - c.steering_rate).abs() < 1e-9);
        prop_assert!((back.throttle - c.throttle).abs() < 1e-9);
        prop_assert!((back.brake - c.brake).abs() < 1e-9);
        prop_assert_eq!((back.gear, back.lamps), (c.gear, c.lamps));

        let back = chassis_b_to_a(&chassis_a_to_b(&ch, &PARAMS), &PARAMS);
        for (x, y) in [(back.speed, ch.speed), (back.throttle, ch.throttle), (back.brake, ch.brake), (back.steering, ch.steering), (back.steering_rate, ch.steering_rate)] {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn localization_preserves_speed(m in localization_a()) {
        let b = convert_localization(&m);
        prop_assert!((b.linear_velocity.norm() - m.linear_velocity.norm()).abs() < 1e-12 * (1.0 + m.linear_velocity.norm()));
        prop_assert!(b.orientation.is_unit(1e-9));
    }
}
