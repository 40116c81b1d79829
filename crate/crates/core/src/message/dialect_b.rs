use serde_json::Value;

use super::fields::{error_offset, obj, vec3_to_object, Fields};
use super::*;

/// Size of the big-endian length prefix in front of every Dialect-B record.
pub const B_LENGTH_PREFIX: usize = 4;

/// Encodes an envelope as one length-prefixed Dialect-B record.
pub fn encode_b(env: &MessageEnvelope) -> Result<Vec<u8>, CodecError> {
    env.validate().map_err(CodecError::InvalidPayload)?;
    let kind = env.payload.kind();
    if env.payload.dialect() == Some(Dialect::A) || kind == MessageKind::Sync {
        return Err(CodecError::InvalidPayload(format!(
            "{} payload has no Dialect-B form",
            kind.as_str()
        )));
    }
    let mut record = payload_fields(&env.payload);
    let map = record.as_object_mut().expect("payload fields are an object");
    map.insert(
        "header".into(),
        obj([
            ("channelName", env.channel.clone().into()),
            ("messageType", message_type(kind).into()),
            ("sequenceNum", env.seq.into()),
            ("timestampSec", env.stamp_s.into()),
        ]),
    );
    let body = serde_json::to_vec(&record).expect("finite JSON values serialize");
    let len = u32::try_from(body.len())
        .map_err(|_| CodecError::InvalidPayload("record exceeds 4 GiB".into()))?;
    let mut out = Vec::with_capacity(B_LENGTH_PREFIX + body.len());
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

fn message_type(kind: MessageKind) -> &'static str {
    match kind {
        MessageKind::Startup => "Startup",
        MessageKind::Localization => "LocalizationEstimate",
        MessageKind::Control => "ControlCommand",
        MessageKind::Chassis => "Chassis",
        MessageKind::Objects => "PerceptionObstacles",
        MessageKind::Sync => "Sync",
    }
}

fn quaternion_object(q: Quaternion) -> Value {
    obj([("qw", q.w.into()), ("qx", q.x.into()), ("qy", q.y.into()), ("qz", q.z.into())])
}

fn signal_object(l: Lamps) -> Value {
    obj([
        ("hazard", l.hazard.into()),
        ("leftTurn", l.left_turn.into()),
        ("rightTurn", l.right_turn.into()),
    ])
}

fn payload_fields(p: &Payload) -> Value {
    match p {
        Payload::Startup(m) => obj([
            ("desiredSpeed", m.desired_speed.into()),
            (
                "routing",
                obj([
                    ("end", vec3_to_object(m.end_position)),
                    ("start", vec3_to_object(m.start_position)),
                ]),
            ),
            ("startupFlag", m.startup_flag.into()),
        ]),
        Payload::LocalizationB(m) => obj([(
            "pose",
            obj([
                ("angularVelocity", vec3_to_object(m.angular_velocity)),
                ("heading", m.heading.into()),
                ("linearAcceleration", vec3_to_object(m.linear_acceleration)),
                ("linearVelocity", vec3_to_object(m.linear_velocity)),
                ("orientation", quaternion_object(m.orientation)),
                ("position", vec3_to_object(m.position)),
            ]),
        )]),
        Payload::ControlB(m) => obj([
            ("brakePercent", m.brake_percent.into()),
            ("gearLocation", gear_location(m.gear).into()),
            ("signal", signal_object(m.lamps)),
            (
                "steering",
                obj([
                    ("ratePercentPerSec", m.steering_rate_percent.into()),
                    ("targetPercent", m.steering_target_percent.into()),
                ]),
            ),
            ("throttlePercent", m.throttle_percent.into()),
        ]),
        Payload::ChassisB(m) => obj([
            ("brakePercent", m.brake_percent.into()),
            ("gearLocation", gear_location(m.gear).into()),
            ("speedMps", m.speed.into()),
            ("steeringPercent", m.steering_percent.into()),
            ("steeringRatePercentPerSec", m.steering_rate_percent.into()),
            ("throttlePercent", m.throttle_percent.into()),
            ("turnSignal", turn_signal_b(m.turn_signal).into()),
        ]),
        Payload::Objects(m) => obj([
            (
                "objects",
                Value::Array(
                    m.objects
                        .iter()
                        .map(|o| {
                            let (ty, sub) = object_type_b(o.object_type);
                            obj([
                                ("height", o.height.into()),
                                ("id", o.id.into()),
                                ("length", o.length.into()),
                                ("position", vec3_to_object(o.position)),
                                ("subType", sub.into()),
                                ("theta", o.heading.into()),
                                ("type", ty.into()),
                                ("velocity", vec3_to_object(o.velocity)),
                                ("width", o.width.into()),
                            ])
                        })
                        .collect(),
                ),
            ),
            ("sensorStatus", sensor_status_b(m.sensor_status).into()),
            ("sensorTimestampSec", m.stamp_s.into()),
        ]),
        Payload::LocalizationA(_) | Payload::ControlA(_) | Payload::ChassisA(_) | Payload::Sync(_) => {
            unreachable!("payloads without a Dialect-B form are rejected before encoding")
        }
    }
}

/// Decodes exactly one length-prefixed Dialect-B record.
pub fn decode_b(bytes: &[u8]) -> Result<MessageEnvelope, CodecError> {
    if bytes.len() < B_LENGTH_PREFIX {
        return Err(CodecError::malformed(bytes.len(), "truncated length prefix"));
    }
    let len = u32::from_be_bytes(bytes[..B_LENGTH_PREFIX].try_into().unwrap()) as usize;
    let body = &bytes[B_LENGTH_PREFIX..];
    if body.len() < len {
        return Err(CodecError::malformed(
            bytes.len(),
            format!("truncated record: length prefix {len}, {} bytes present", body.len()),
        ));
    }
    if body.len() > len {
        return Err(CodecError::malformed(B_LENGTH_PREFIX + len, "trailing bytes after record"));
    }
    let value: Value = serde_json::from_slice(body).map_err(|e| {
        CodecError::malformed(error_offset(body, &e, B_LENGTH_PREFIX), e.to_string())
    })?;
    let root = Fields::root(&value, B_LENGTH_PREFIX)?;
    let header = root.object("header")?;
    let payload = match header.str("messageType")? {
        "Startup" => {
            let routing = root.object("routing")?;
            Payload::Startup(StartupMsg {
                start_position: routing.vec3_object("start")?,
                end_position: routing.vec3_object("end")?,
                desired_speed: root.f64("desiredSpeed")?,
                startup_flag: root.bool("startupFlag")?,
            })
        }
        "LocalizationEstimate" => {
            let pose = root.object("pose")?;
            let q = pose.object("orientation")?;
            Payload::LocalizationB(LocalizationB {
                position: pose.vec3_object("position")?,
                orientation: Quaternion::new(q.f64("qw")?, q.f64("qx")?, q.f64("qy")?, q.f64("qz")?),
                linear_velocity: pose.vec3_object("linearVelocity")?,
                linear_acceleration: pose.vec3_object("linearAcceleration")?,
                angular_velocity: pose.vec3_object("angularVelocity")?,
                heading: pose.f64("heading")?,
            })
        }
        "ControlCommand" => {
            let steering = root.object("steering")?;
            Payload::ControlB(ControlB {
                steering_rate_percent: steering.f64("ratePercentPerSec")?,
                steering_target_percent: steering.f64("targetPercent")?,
                throttle_percent: root.f64("throttlePercent")?,
                brake_percent: root.f64("brakePercent")?,
                gear: root.enum_str("gearLocation", parse_gear_location)?,
                lamps: parse_signal(&root.object("signal")?)?,
            })
        }
        "Chassis" => Payload::ChassisB(ChassisB {
            speed: root.f64("speedMps")?,
            throttle_percent: root.f64("throttlePercent")?,
            brake_percent: root.f64("brakePercent")?,
            steering_percent: root.f64("steeringPercent")?,
            steering_rate_percent: root.f64("steeringRatePercentPerSec")?,
            gear: root.enum_str("gearLocation", parse_gear_location)?,
            turn_signal: root.enum_str("turnSignal", parse_turn_signal_b)?,
        }),
        "PerceptionObstacles" => {
            let mut objects = Vec::new();
            for (i, v) in root.array("objects")?.iter().enumerate() {
                let o = root.element(v, i, "objects")?;
                let ty = o.str("type")?;
                let sub = o.str("subType")?;
                let object_type = parse_object_type_b(ty, sub).ok_or_else(|| {
                    CodecError::malformed(B_LENGTH_PREFIX, format!("unknown obstacle type {ty}/{sub}"))
                })?;
                objects.push(SensorObject {
                    id: o.u32("id")?,
                    position: o.vec3_object("position")?,
                    velocity: o.vec3_object("velocity")?,
                    heading: o.f64("theta")?,
                    length: o.f64("length")?,
                    width: o.f64("width")?,
                    height: o.f64("height")?,
                    object_type,
                });
            }
            Payload::Objects(SensorObjectList {
                objects,
                stamp_s: root.f64("sensorTimestampSec")?,
                sensor_status: root.enum_str("sensorStatus", parse_sensor_status_b)?,
            })
        }
        other => {
            return Err(CodecError::malformed(
                B_LENGTH_PREFIX,
                format!("unknown message schema `{other}`"),
            ));
        }
    };
    let env = MessageEnvelope {
        seq: header.u64("sequenceNum")?,
        stamp_s: header.f64("timestampSec")?,
        channel: header.str("channelName")?.to_string(),
        payload,
    };
    env.validate().map_err(|r| CodecError::malformed(B_LENGTH_PREFIX, r))?;
    Ok(env)
}

fn parse_signal(f: &Fields<'_>) -> Result<Lamps, CodecError> {
    Ok(Lamps {
        left_turn: f.bool("leftTurn")?,
        right_turn: f.bool("rightTurn")?,
        hazard: f.bool("hazard")?,
    })
}

fn gear_location(g: Gear) -> &'static str {
    match g {
        Gear::P => "GEAR_PARKING",
        Gear::R => "GEAR_REVERSE",
        Gear::N => "GEAR_NEUTRAL",
        Gear::D => "GEAR_DRIVE",
    }
}

fn parse_gear_location(s: &str) -> Option<Gear> {
    Some(match s {
        "GEAR_PARKING" => Gear::P,
        "GEAR_REVERSE" => Gear::R,
        "GEAR_NEUTRAL" => Gear::N,
        "GEAR_DRIVE" => Gear::D,
        _ => return None,
    })
}

fn turn_signal_b(t: TurnSignal) -> &'static str {
    match t {
        TurnSignal::Off => "TURN_NONE",
        TurnSignal::Left => "TURN_LEFT",
        TurnSignal::Right => "TURN_RIGHT",
    }
}

fn parse_turn_signal_b(s: &str) -> Option<TurnSignal> {
    Some(match s {
        "TURN_NONE" => TurnSignal::Off,
        "TURN_LEFT" => TurnSignal::Left,
        "TURN_RIGHT" => TurnSignal::Right,
        _ => return None,
    })
}

fn object_type_b(t: ObjectType) -> (&'static str, &'static str) {
    match t {
        ObjectType::Car => ("VEHICLE", "ST_CAR"),
        ObjectType::Truck => ("VEHICLE", "ST_TRUCK"),
        ObjectType::Unknown => ("UNKNOWN", "ST_UNKNOWN"),
    }
}

fn parse_object_type_b(ty: &str, sub: &str) -> Option<ObjectType> {
    Some(match (ty, sub) {
        ("VEHICLE", "ST_CAR") => ObjectType::Car,
        ("VEHICLE", "ST_TRUCK") => ObjectType::Truck,
        ("UNKNOWN", "ST_UNKNOWN") => ObjectType::Unknown,
        _ => return None,
    })
}

fn sensor_status_b(s: SensorStatus) -> &'static str {
    match s {
        SensorStatus::Ok => "OK",
        SensorStatus::Degraded => "DEGRADED",
        SensorStatus::Off => "OFF",
    }
}

fn parse_sensor_status_b(s: &str) -> Option<SensorStatus> {
    Some(match s {
        "OK" => SensorStatus::Ok,
        "DEGRADED" => SensorStatus::Degraded,
        "OFF" => SensorStatus::Off,
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn control(throttle_percent: f64) -> MessageEnvelope {
        MessageEnvelope {
            seq: 9,
            stamp_s: 4.5,
            channel: "/apollo/control".into(),
            payload: Payload::ControlB(ControlB {
                steering_rate_percent: 100.0,
                steering_target_percent: -12.5,
                throttle_percent,
                brake_percent: 0.0,
                gear: Gear::D,
                lamps: Lamps { left_turn: true, ..Lamps::default() },
            }),
        }
    }

    #[test]
    fn control_throttle_in_percent() {
        let bytes = encode_b(&control(0.37 * 100.0)).unwrap();
        let text = std::str::from_utf8(&bytes[4..]).unwrap();
        assert!(text.contains("\"throttlePercent\":37.0"), "{text}");
        assert_eq!(decode_b(&bytes).unwrap(), control(37.0));
    }

    #[test]
    fn length_prefix_is_big_endian() {
        let bytes = encode_b(&control(5.0)).unwrap();
        let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        assert_eq!(len, bytes.len() - 4);
        assert_eq!(bytes[4], b'{');
    }

    #[test]
    fn empty_object_list() {
        let env = MessageEnvelope::new(
            "/apollo/perception/obstacles",
            1.0,
            Payload::Objects(SensorObjectList {
                objects: vec![],
                stamp_s: 1.0,
                sensor_status: SensorStatus::Ok,
            }),
        );
        let bytes = encode_b(&env).unwrap();
        assert!(std::str::from_utf8(&bytes[4..]).unwrap().contains("\"objects\":[]"));
        assert_eq!(decode_b(&bytes).unwrap(), env);
    }

    #[test]
    fn truncated_record_is_malformed() {
        let mut bytes = 100u32.to_be_bytes().to_vec();
        bytes.extend_from_slice(b"{\"header\":");
        assert_eq!(bytes.len(), 14);
        match decode_b(&bytes) {
            Err(CodecError::MalformedRecord { offset, reason }) => {
                assert_eq!(offset, 14);
                assert!(reason.contains("truncated"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(decode_b(&[0, 0]), Err(CodecError::MalformedRecord { offset: 2, .. })));
    }

    #[test]
    fn out_of_range_percent_is_malformed() {
        let bytes = encode_b(&control(50.0)).unwrap();
        let text = String::from_utf8(bytes[4..].to_vec()).unwrap().replace(":50.0", ":150.0");
        let mut rec = (text.len() as u32).to_be_bytes().to_vec();
        rec.extend_from_slice(text.as_bytes());
        let err = decode_b(&rec).unwrap_err();
        assert!(matches!(err, CodecError::MalformedRecord { .. }), "{err}");
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let bytes = encode_b(&control(5.0)).unwrap();
        let text = String::from_utf8(bytes[4..].to_vec())
            .unwrap()
            .replacen('{', "{\"extension\":{\"a\":1},", 1);
        let mut rec = (text.len() as u32).to_be_bytes().to_vec();
        rec.extend_from_slice(text.as_bytes());
        assert_eq!(decode_b(&rec).unwrap(), control(5.0));
    }

    #[test]
    fn sync_has_no_b_form() {
        let env = MessageEnvelope::new(
            "/sync/tick",
            0.0,
            Payload::Sync(SyncMsg { tick: 1, origin: SyncOrigin::Dynamics }),
        );
        assert!(matches!(encode_b(&env), Err(CodecError::InvalidPayload(_))));
    }
}
