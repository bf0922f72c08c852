//! Shared codec fixtures: every command with its request frame and a
//! sample response from a freshly booted module.

use emr_core::protocol::{frame, Frame, MotorAction};
use emr_core::{Command, Response};
use serde::Serialize;

use crate::session::Session;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fixtures {
    pub version: u32,
    pub module_address: u8,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Entry {
    pub command: Command,
    pub name: String,
    pub description: String,
    pub frame_hex: String,
    pub response_hex: String,
}

/// Each command runs on its own fresh module. Motor commands and scans
/// first switch the relevant motor on, so steps and scans answer ACK.
pub fn fixtures(session: &Session) -> Fixtures {
    let address = session.config.address;
    let entries = Command::all()
        .into_iter()
        .map(|cmd| {
            let mut fw = session.boot();
            let (scene, pose) = (&session.scene, &session.pose);
            let prepare = match cmd {
                Command::Motor { motor, .. } => Some(motor),
                Command::LocalScan => Some(1),
                _ => None,
            };
            if let Some(motor) = prepare {
                fw.execute(
                    &Command::Motor {
                        motor,
                        action: MotorAction::On,
                    },
                    scene,
                    pose,
                );
            }
            let request = frame(&Frame::command(address, &cmd)).expect("module address is usable");
            let response = fw.execute_frame(&request, scene, pose);
            debug_assert!(Response::parse(&response).is_ok());
            Entry {
                command: cmd,
                name: cmd.to_string(),
                description: cmd.description(),
                frame_hex: hex::encode(&request),
                response_hex: hex::encode(&response),
            }
        })
        .collect();
    Fixtures {
        version: FORMAT_VERSION,
        module_address: address.get(),
        entries,
    }
}
