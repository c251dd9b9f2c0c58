//! GPIO lines and the interrupt status register, the observable ends of
//! every latency measurement.

use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LineId(pub u32);

impl std::fmt::Display for LineId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Low,
    High,
}

impl Level {
    pub fn flipped(self) -> Level {
        match self {
            Level::Low => Level::High,
            Level::High => Level::Low,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Level::Low => 0,
            Level::High => 1,
        }
    }
}

/// One line. The full transition log is optional; long runs keep only the
/// running state so memory stays flat. Appends always verify alternation.
#[derive(Debug)]
pub struct GpioLine {
    pub id: LineId,
    pub level: Level,
    pub transitions: u64,
    pub last_at: Option<SimTime>,
    log: Option<Vec<(SimTime, Level)>>,
}

impl GpioLine {
    pub fn new(id: LineId, keep_log: bool) -> GpioLine {
        GpioLine {
            id,
            level: Level::Low,
            transitions: 0,
            last_at: None,
            log: if keep_log { Some(Vec::new()) } else { None },
        }
    }

    /// Toggle at `at`. Levels alternate by construction; timestamps must not
    /// regress.
    pub fn toggle(&mut self, at: SimTime) -> Level {
        if let Some(prev) = self.last_at {
            assert!(at >= prev, "gpio transition out of order");
        }
        self.level = self.level.flipped();
        self.transitions += 1;
        self.last_at = Some(at);
        if let Some(log) = &mut self.log {
            log.push((at, self.level));
        }
        self.level
    }

    pub fn log(&self) -> &[(SimTime, Level)] {
        self.log.as_deref().unwrap_or(&[])
    }
}

/// Pending bits, one per line. Reads do not clear; only an explicit
/// acknowledge does.
#[derive(Debug, Default)]
pub struct InterruptStatus {
    pending: Vec<bool>,
}

impl InterruptStatus {
    pub fn new(n_lines: usize) -> InterruptStatus {
        InterruptStatus { pending: vec![false; n_lines] }
    }

    pub fn raise(&mut self, line: LineId) {
        self.pending[line.0 as usize] = true;
    }

    pub fn read(&self, line: LineId) -> bool {
        self.pending[line.0 as usize]
    }

    pub fn acknowledge(&mut self, line: LineId) {
        self.pending[line.0 as usize] = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_alternates_levels() {
        let mut line = GpioLine::new(LineId(0), true);
        line.toggle(SimTime::from_ns(1));
        line.toggle(SimTime::from_ns(2));
        line.toggle(SimTime::from_ns(2));
        let lv: Vec<Level> = line.log().iter().map(|&(_, l)| l).collect();
        assert_eq!(lv, vec![Level::High, Level::Low, Level::High]);
        assert_eq!(line.transitions, 3);
    }

    #[test]
    fn read_does_not_clear_pending() {
        let mut isr = InterruptStatus::new(2);
        isr.raise(LineId(1));
        assert!(isr.read(LineId(1)));
        assert!(isr.read(LineId(1)));
        isr.acknowledge(LineId(1));
        assert!(!isr.read(LineId(1)));
        assert!(!isr.read(LineId(0)));
    }
}
