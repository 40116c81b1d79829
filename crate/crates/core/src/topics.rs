//! Channel names used by the shipped dynamics and ADS sides.

use crate::bus::Topic;
use crate::message::Dialect;

pub const CM_LOCALIZATION: &str = "/cm/localization";
pub const CM_CHASSIS: &str = "/cm/chassis";
pub const CM_OBJECTS: &str = "/cm/objects";
pub const CM_STARTUP: &str = "/cm/startup";
pub const CM_CONTROL: &str = "/cm/control";

pub const APOLLO_LOCALIZATION: &str = "/apollo/localization/pose";
pub const APOLLO_CHASSIS: &str = "/apollo/canbus/chassis";
pub const APOLLO_OBSTACLES: &str = "/apollo/perception/obstacles";
pub const APOLLO_STARTUP: &str = "/apollo/startup";
pub const APOLLO_CONTROL: &str = "/apollo/control";

/// Tick barrier, Dialect A on both buses.
pub const SYNC_TICK: &str = "/sync/tick";

fn topic(name: &str, dialect: Dialect) -> Topic {
    Topic::new(name, dialect).expect("built-in topic names are valid")
}

pub fn dynamics_topics() -> Vec<Topic> {
    [CM_LOCALIZATION, CM_CHASSIS, CM_OBJECTS, CM_STARTUP, CM_CONTROL, SYNC_TICK]
        .into_iter()
        .map(|n| topic(n, Dialect::A))
        .collect()
}

pub fn ads_topics() -> Vec<Topic> {
    let mut v: Vec<Topic> = [APOLLO_LOCALIZATION, APOLLO_CHASSIS, APOLLO_OBSTACLES, APOLLO_STARTUP, APOLLO_CONTROL]
        .into_iter()
        .map(|n| topic(n, Dialect::B))
        .collect();
    v.push(topic(SYNC_TICK, Dialect::A));
    v
}
