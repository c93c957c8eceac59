//! Background maintenance: runs the configured plan over every namespace
//! once per interval until stopped.

use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;

use memdb_core::{Engine, MaintenancePlan};

pub struct MaintenanceScheduler {
    stop: Sender<()>,
    thread: JoinHandle<usize>,
}

impl MaintenanceScheduler {
    pub fn start(engine: Arc<Engine>, plan: MaintenancePlan) -> Self {
        let (stop, rx) = mpsc::channel::<()>();
        let thread = std::thread::Builder::new()
            .name("memdb-maintenance".into())
            .spawn(move || {
                let mut cycles = 0;
                loop {
                    match rx.recv_timeout(plan.interval) {
                        Err(RecvTimeoutError::Timeout) => {}
                        Ok(()) | Err(RecvTimeoutError::Disconnected) => return cycles,
                    }
                    for ns in engine.namespaces() {
                        match engine.run_maintenance(&ns, &plan) {
                            Ok(report) => {
                                cycles += 1;
                                tracing::info!(
                                    namespace = %ns,
                                    cycle = report.cycle_id,
                                    pruned = report.edges_pruned,
                                    compacted = report.segments_compacted,
                                    errors = report.errors.len(),
                                    "maintenance cycle finished"
                                );
                            }
                            Err(e) => tracing::warn!(namespace = %ns, error = %e, "maintenance cycle failed"),
                        }
                    }
                }
            })
            .expect("spawn maintenance thread");
        MaintenanceScheduler { stop, thread }
    }

    /// Stops the scheduler after any running cycle. Returns the number of
    /// namespace cycles completed.
    pub fn stop(self) -> usize {
        let _ = self.stop.send(());
        self.thread.join().unwrap_or(0)
    }
}
