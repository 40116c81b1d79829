use serde_json::Value;

use super::fields::{error_offset, obj, vec3_to_array, Fields};
use super::*;

/// Encodes an envelope as one newline-terminated Dialect-A record.
pub fn encode_a(env: &MessageEnvelope) -> Result<Vec<u8>, CodecError> {
    env.validate().map_err(CodecError::InvalidPayload)?;
    if env.payload.dialect() == Some(Dialect::B) {
        return Err(CodecError::InvalidPayload(format!(
            "{} payload carries Dialect-B units",
            env.payload.kind().as_str()
        )));
    }
    let mut record = payload_fields(&env.payload);
    let map = record.as_object_mut().expect("payload fields are an object");
    map.insert("channel".into(), env.channel.clone().into());
    map.insert("seq".into(), env.seq.into());
    map.insert("stamp_s".into(), env.stamp_s.into());
    map.insert("type".into(), env.payload.kind().as_str().into());
    let mut bytes = serde_json::to_vec(&record).expect("finite JSON values serialize");
    bytes.push(b'\n');
    Ok(bytes)
}

fn payload_fields(p: &Payload) -> Value {
    match p {
        Payload::Startup(m) => obj([
            ("desired_speed", m.desired_speed.into()),
            ("end_position", vec3_to_array(m.end_position)),
            ("start_position", vec3_to_array(m.start_position)),
            ("startup_flag", m.startup_flag.into()),
        ]),
        Payload::LocalizationA(m) => obj([
            ("angular_velocity", vec3_to_array(m.angular_velocity)),
            ("heading", m.heading.into()),
            ("linear_acceleration", vec3_to_array(m.linear_acceleration)),
            ("linear_velocity", vec3_to_array(m.linear_velocity)),
            ("pitch", m.attitude.pitch.into()),
            ("position", vec3_to_array(m.position)),
            ("roll", m.attitude.roll.into()),
            ("yaw", m.attitude.yaw.into()),
        ]),
        Payload::ControlA(m) => obj([
            ("brake", m.brake.into()),
            ("gear", gear_str(m.gear).into()),
            ("lamps", m.lamps.bits().into()),
            ("steering_angle", m.steering_angle.into()),
            ("steering_rate", m.steering_rate.into()),
            ("throttle", m.throttle.into()),
        ]),
        Payload::ChassisA(m) => obj([
            ("brake", m.brake.into()),
            ("gear", gear_str(m.gear).into()),
            ("speed", m.speed.into()),
            ("steering", m.steering.into()),
            ("steering_rate", m.steering_rate.into()),
            ("throttle", m.throttle.into()),
            ("turn_signal", turn_signal_str(m.turn_signal).into()),
        ]),
        Payload::Objects(m) => obj([
            (
                "objects",
                Value::Array(
                    m.objects
                        .iter()
                        .map(|o| {
                            obj([
                                ("heading", o.heading.into()),
                                ("height", o.height.into()),
                                ("id", o.id.into()),
                                ("length", o.length.into()),
                                ("object_type", object_type_str(o.object_type).into()),
                                ("position", vec3_to_array(o.position)),
                                ("velocity", vec3_to_array(o.velocity)),
                                ("width", o.width.into()),
                            ])
                        })
                        .collect(),
                ),
            ),
            ("sensor_stamp_s", m.stamp_s.into()),
            ("sensor_status", sensor_status_str(m.sensor_status).into()),
        ]),
        Payload::Sync(m) => obj([
            ("origin", sync_origin_str(m.origin).into()),
            ("tick", m.tick.into()),
        ]),
        Payload::LocalizationB(_) | Payload::ControlB(_) | Payload::ChassisB(_) => {
            unreachable!("Dialect-B payloads are rejected before encoding")
        }
    }
}

/// Decodes exactly one newline-terminated Dialect-A record.
pub fn decode_a(bytes: &[u8]) -> Result<MessageEnvelope, CodecError> {
    let Some((&last, body)) = bytes.split_last() else {
        return Err(CodecError::malformed(0, "empty record"));
    };
    if last != b'\n' {
        return Err(CodecError::malformed(bytes.len(), "record is not newline-terminated"));
    }
    if let Some(pos) = body.iter().position(|b| *b == b'\n') {
        return Err(CodecError::malformed(pos, "embedded newline inside record"));
    }
    let value: Value = serde_json::from_slice(body)
        .map_err(|e| CodecError::malformed(error_offset(body, &e, 0), e.to_string()))?;
    let f = Fields::root(&value, 0)?;
    let kind = f.str("type")?;
    let payload = match kind {
        "startup" => Payload::Startup(StartupMsg {
            start_position: f.vec3_array("start_position")?,
            end_position: f.vec3_array("end_position")?,
            desired_speed: f.f64("desired_speed")?,
            startup_flag: f.bool("startup_flag")?,
        }),
        "localization" => Payload::LocalizationA(LocalizationA {
            position: f.vec3_array("position")?,
            attitude: EulerAngles::new(f.f64("roll")?, f.f64("pitch")?, f.f64("yaw")?),
            linear_velocity: f.vec3_array("linear_velocity")?,
            linear_acceleration: f.vec3_array("linear_acceleration")?,
            angular_velocity: f.vec3_array("angular_velocity")?,
            heading: f.f64("heading")?,
        }),
        "control" => {
            let bits = f.u64("lamps")?;
            let lamps = u8::try_from(bits)
                .ok()
                .and_then(Lamps::from_bits)
                .ok_or_else(|| CodecError::malformed(0, format!("lamp bits {bits} out of range")))?;
            Payload::ControlA(ControlA {
                steering_rate: f.f64("steering_rate")?,
                steering_angle: f.f64("steering_angle")?,
                throttle: f.f64("throttle")?,
                brake: f.f64("brake")?,
                gear: f.enum_str("gear", parse_gear)?,
                lamps,
            })
        }
        "chassis" => Payload::ChassisA(ChassisA {
            speed: f.f64("speed")?,
            throttle: f.f64("throttle")?,
            brake: f.f64("brake")?,
            steering: f.f64("steering")?,
            steering_rate: f.f64("steering_rate")?,
            gear: f.enum_str("gear", parse_gear)?,
            turn_signal: f.enum_str("turn_signal", parse_turn_signal)?,
        }),
        "objects" => {
            let mut objects = Vec::new();
            for (i, v) in f.array("objects")?.iter().enumerate() {
                let o = f.element(v, i, "objects")?;
                objects.push(SensorObject {
                    id: o.u32("id")?,
                    position: o.vec3_array("position")?,
                    velocity: o.vec3_array("velocity")?,
                    heading: o.f64("heading")?,
                    length: o.f64("length")?,
                    width: o.f64("width")?,
                    height: o.f64("height")?,
                    object_type: o.enum_str("object_type", parse_object_type)?,
                });
            }
            Payload::Objects(SensorObjectList {
                objects,
                stamp_s: f.f64("sensor_stamp_s")?,
                sensor_status: f.enum_str("sensor_status", parse_sensor_status)?,
            })
        }
        "sync" => Payload::Sync(SyncMsg {
            tick: f.u64("tick")?,
            origin: f.enum_str("origin", parse_sync_origin)?,
        }),
        other => {
            return Err(CodecError::malformed(0, format!("unknown message schema `{other}`")));
        }
    };
    let env = MessageEnvelope {
        seq: f.u64("seq")?,
        stamp_s: f.f64("stamp_s")?,
        channel: f.str("channel")?.to_string(),
        payload,
    };
    env.validate().map_err(|r| CodecError::malformed(0, r))?;
    Ok(env)
}

fn turn_signal_str(t: TurnSignal) -> &'static str {
    match t {
        TurnSignal::Off => "off",
        TurnSignal::Left => "left",
        TurnSignal::Right => "right",
    }
}

fn parse_turn_signal(s: &str) -> Option<TurnSignal> {
    Some(match s {
        "off" => TurnSignal::Off,
        "left" => TurnSignal::Left,
        "right" => TurnSignal::Right,
        _ => return None,
    })
}

fn object_type_str(t: ObjectType) -> &'static str {
    match t {
        ObjectType::Car => "car",
        ObjectType::Truck => "truck",
        ObjectType::Unknown => "unknown",
    }
}

fn parse_object_type(s: &str) -> Option<ObjectType> {
    Some(match s {
        "car" => ObjectType::Car,
        "truck" => ObjectType::Truck,
        "unknown" => ObjectType::Unknown,
        _ => return None,
    })
}

fn sensor_status_str(s: SensorStatus) -> &'static str {
    match s {
        SensorStatus::Ok => "ok",
        SensorStatus::Degraded => "degraded",
        SensorStatus::Off => "off",
    }
}

fn parse_sensor_status(s: &str) -> Option<SensorStatus> {
    Some(match s {
        "ok" => SensorStatus::Ok,
        "degraded" => SensorStatus::Degraded,
        "off" => SensorStatus::Off,
        _ => return None,
    })
}

fn sync_origin_str(o: SyncOrigin) -> &'static str {
    match o {
        SyncOrigin::Dynamics => "dynamics",
        SyncOrigin::Ads => "ads",
    }
}

fn parse_sync_origin(s: &str) -> Option<SyncOrigin> {
    Some(match s {
        "dynamics" => SyncOrigin::Dynamics,
        "ads" => SyncOrigin::Ads,
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chassis() -> MessageEnvelope {
        MessageEnvelope {
            seq: 3,
            stamp_s: 1.25,
            channel: "/cm/chassis".into(),
            payload: Payload::ChassisA(ChassisA {
                speed: 10.0,
                throttle: 0.37,
                brake: 0.0,
                steering: -0.01,
                steering_rate: 0.0,
                gear: Gear::D,
                turn_signal: TurnSignal::Off,
            }),
        }
    }

    #[test]
    fn chassis_throttle_is_echoed() {
        let bytes = encode_a(&chassis()).unwrap();
        let text = std::str::from_utf8(&bytes).unwrap();
        assert!(text.contains("\"throttle\":0.37"), "{text}");
        assert!(text.ends_with('\n'));
        assert_eq!(decode_a(&bytes).unwrap(), chassis());
    }

    #[test]
    fn startup_flag_is_echoed() {
        let env = MessageEnvelope::new(
            "/cm/startup",
            0.0,
            Payload::Startup(StartupMsg {
                start_position: Vec3::new(50.0, -27.0, 0.0),
                end_position: Vec3::new(2400.0, -27.0, 0.0),
                desired_speed: 25.0,
                startup_flag: true,
            }),
        );
        let bytes = encode_a(&env).unwrap();
        assert!(std::str::from_utf8(&bytes).unwrap().contains("\"startup_flag\":true"));
    }

    #[test]
    fn keys_are_sorted() {
        let text = String::from_utf8(encode_a(&chassis()).unwrap()).unwrap();
        let keys = [
            "\"brake\"", "\"channel\"", "\"gear\"", "\"seq\"", "\"speed\"", "\"stamp_s\"",
            "\"steering\"", "\"steering_rate\"", "\"throttle\"", "\"turn_signal\"", "\"type\"",
        ];
        let positions: Vec<usize> = keys.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{text}");
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let mut text = String::from_utf8(encode_a(&chassis()).unwrap()).unwrap();
        text.insert_str(1, "\"zz_future\":[1,2],");
        assert_eq!(decode_a(text.as_bytes()).unwrap(), chassis());
    }

    #[test]
    fn dialect_b_payload_rejected() {
        let env = MessageEnvelope::new(
            "/apollo/control",
            0.0,
            Payload::ControlB(ControlB {
                steering_rate_percent: 100.0,
                steering_target_percent: 0.0,
                throttle_percent: 10.0,
                brake_percent: 0.0,
                gear: Gear::D,
                lamps: Lamps::default(),
            }),
        );
        assert!(matches!(encode_a(&env), Err(CodecError::InvalidPayload(_))));
    }

    #[test]
    fn unknown_schema_is_malformed() {
        let rec = b"{\"channel\":\"/x\",\"seq\":1,\"stamp_s\":0.0,\"type\":\"weather\"}\n";
        assert!(matches!(decode_a(rec), Err(CodecError::MalformedRecord { .. })));
    }

    #[test]
    fn syntax_error_reports_offset() {
        let rec = b"{\"channel\":,}\n";
        match decode_a(rec) {
            Err(CodecError::MalformedRecord { offset, .. }) => assert_eq!(offset, 11),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_terminator_is_malformed() {
        let bytes = encode_a(&chassis()).unwrap();
        let err = decode_a(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, CodecError::MalformedRecord { .. }));
    }
}
