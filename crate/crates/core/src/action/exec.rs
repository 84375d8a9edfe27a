use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

const DEFAULT_ENV: &[&str] = &["PATH", "HOME", "LANG", "LC_ALL", "TMPDIR", "USER", "TERM"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutput {
    /// stdout and stderr interleaved as the process wrote them.
    pub output: String,
    /// `None` when the process was killed by a signal or timed out.
    pub exit_code: Option<i32>,
    pub timed_out: bool,
}

impl CommandOutput {
    pub fn success(&self) -> bool {
        self.exit_code == Some(0)
    }
}

/// Runs shell commands in a fixed working directory with a filtered environment.
#[derive(Debug, Clone)]
pub struct CommandRunner {
    workdir: PathBuf,
    env_allowlist: Vec<String>,
    timeout: Duration,
}

impl CommandRunner {
    pub fn new(workdir: impl Into<PathBuf>) -> Self {
        CommandRunner {
            workdir: workdir.into(),
            env_allowlist: DEFAULT_ENV.iter().map(|s| s.to_string()).collect(),
            timeout: Duration::from_secs(60),
        }
    }

    pub fn with_env_allowlist(mut self, names: Vec<String>) -> Self {
        self.env_allowlist = names;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn workdir(&self) -> &Path {
        &self.workdir
    }

    pub fn run(&self, command: &str) -> std::io::Result<CommandOutput> {
        let (mut reader, writer) = std::io::pipe()?;
        let mut cmd = Command::new("sh");
        cmd.arg("-c")
            .arg(command)
            .current_dir(&self.workdir)
            .env_clear()
            .stdin(Stdio::null())
            .stdout(writer.try_clone()?)
            .stderr(writer);
        for name in &self.env_allowlist {
            if let Some(v) = std::env::var_os(name) {
                cmd.env(name, v);
            }
        }
        let mut child = cmd.spawn()?;
        // The command holds the only write ends now; drop ours via `cmd`.
        drop(cmd);
        let collector = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = reader.read_to_end(&mut buf);
            buf
        });

        let deadline = Instant::now() + self.timeout;
        let mut timed_out = false;
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if Instant::now() >= deadline {
                timed_out = true;
                let _ = child.kill();
                break child.wait()?;
            }
            thread::sleep(Duration::from_millis(5));
        };
        // A backgrounded grandchild could keep the pipe open; don't wait on it forever.
        let output = if timed_out {
            String::new()
        } else {
            String::from_utf8_lossy(&collector.join().unwrap_or_default()).into_owned()
        };
        Ok(CommandOutput {
            output,
            exit_code: if timed_out { None } else { status.code() },
            timed_out,
        })
    }
}
