use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use anyhow::Result;
use ikemo_core::{RunStatus, Session, SessionError, StepOutcome, UserFeedback};
use log::error;

use crate::output::{RunDir, RunFile};

/// A session plus its run directory. Every state change goes through here so
/// the directory always matches the session.
pub struct Driver {
    session: Session,
    dir: Option<RunDir>,
    checkpoint_every: usize,
    last_checkpoint: usize,
    blocked: bool,
    closed: bool,
}

impl Driver {
    /// `checkpoint_every` is in generations; 0 writes checkpoints only when
    /// the run blocks or ends.
    pub fn new(session: Session, dir: Option<PathBuf>, checkpoint_every: usize) -> Result<Self> {
        let dir = dir.map(|p| RunDir::open(p, &session)).transpose()?;
        let mut d = Self {
            last_checkpoint: session.gen(),
            session,
            dir,
            checkpoint_every,
            blocked: false,
            closed: false,
        };
        d.persist()?;
        Ok(d)
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn dir(&self) -> Option<&RunDir> {
        self.dir.as_ref()
    }

    pub fn into_session(self) -> Session {
        self.session
    }

    /// One generation. A panic inside the optimizer fails the run instead of
    /// unwinding into the caller.
    pub fn advance(&mut self) -> Result<StepOutcome> {
        let out = match catch_unwind(AssertUnwindSafe(|| self.session.step())) {
            Ok(out) => out,
            Err(_) => {
                error!("optimizer panicked at gen {}", self.session.gen());
                self.session.fail();
                StepOutcome::Finished
            }
        };
        self.persist()?;
        Ok(out)
    }

    /// Steps until the run finishes, blocks or is paused.
    pub fn run(&mut self) -> Result<StepOutcome> {
        loop {
            let out = self.advance()?;
            if out != StepOutcome::Advanced {
                return Ok(out);
            }
        }
    }

    pub fn submit_feedback(&mut self, fb: UserFeedback) -> Result<Result<(), SessionError>> {
        let r = self.session.submit_feedback(fb);
        self.persist()?;
        Ok(r)
    }

    pub fn pause(&mut self) -> Result<Result<(), SessionError>> {
        let r = self.session.pause();
        self.persist()?;
        Ok(r)
    }

    pub fn resume(&mut self) -> Result<Result<(), SessionError>> {
        let r = self.session.resume_run();
        self.persist()?;
        Ok(r)
    }

    /// Marks the run failed; a failing write here is only logged.
    pub fn fail(&mut self) {
        self.session.fail();
        if let Err(e) = self.persist() {
            error!("cannot persist failed run: {e:#}");
        }
    }

    fn persist(&mut self) -> Result<()> {
        let Some(dir) = &mut self.dir else {
            return Ok(());
        };
        let s = &self.session;
        dir.sync_log(&s.state().log)?;
        match s.status() {
            RunStatus::Finished | RunStatus::Failed => {
                if !self.closed {
                    dir.write_checkpoint(&s.checkpoint())?;
                    dir.clear_rules()?;
                    if s.status() == RunStatus::Finished {
                        dir.write_record(&RunFile::of(s))?;
                    }
                    self.closed = true;
                }
            }
            RunStatus::PausedForFeedback => {
                if !self.blocked {
                    dir.write_checkpoint(&s.checkpoint())?;
                    dir.write_rules(&s.rules_view())?;
                    self.blocked = true;
                }
            }
            RunStatus::Running | RunStatus::Paused => {
                if self.blocked {
                    dir.clear_rules()?;
                    self.blocked = false;
                }
                let gen = s.gen();
                if self.checkpoint_every > 0
                    && gen > self.last_checkpoint
                    && gen.is_multiple_of(self.checkpoint_every)
                {
                    dir.write_checkpoint(&s.checkpoint())?;
                    self.last_checkpoint = gen;
                }
            }
        }
        Ok(())
    }
}
