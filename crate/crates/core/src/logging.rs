//! Minimal stderr logger controlled by `SEMISTATIC_LOG_LEVEL` (error|info|debug).

use std::sync::OnceLock;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Error = 0,
    Info = 1,
    Debug = 2,
}

static LEVEL: OnceLock<Level> = OnceLock::new();

pub fn level() -> Level {
    *LEVEL.get_or_init(|| {
        match std::env::var("SEMISTATIC_LOG_LEVEL")
            .unwrap_or_default()
            .to_ascii_lowercase()
            .as_str()
        {
            "debug" => Level::Debug,
            "info" => Level::Info,
            _ => Level::Error,
        }
    })
}

pub fn log(at: Level, msg: &str) {
    if at <= level() {
        eprintln!("[{}] {msg}", label(at));
    }
}

fn label(l: Level) -> &'static str {
    match l {
        Level::Error => "error",
        Level::Info => "info",
        Level::Debug => "debug",
    }
}

pub fn info(msg: &str) {
    log(Level::Info, msg);
}

pub fn debug(msg: &str) {
    log(Level::Debug, msg);
}
