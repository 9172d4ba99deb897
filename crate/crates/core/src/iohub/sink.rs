use std::fs::{self, File};
use std::io::{self, BufWriter, ErrorKind, Write};
use std::net::{Ipv4Addr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use image::RgbImage;

use super::wire::write_frame;
use super::{FrameMeta, FrameSink, IoError, SinkSpec};

fn check_dims(expected: (u32, u32), frame: &RgbImage) -> Result<(), IoError> {
    if frame.dimensions() != expected {
        return Err(IoError::DimsMismatch {
            expected,
            found: frame.dimensions(),
        });
    }
    Ok(())
}

/// Discards frames, optionally after sleeping to emulate a slow consumer.
#[derive(Debug, Default)]
pub struct NullSink {
    pub delay: Duration,
}

impl FrameSink for NullSink {
    fn kind(&self) -> &'static str {
        "null"
    }

    fn write(&mut self, _frame: &RgbImage, _meta: &FrameMeta) -> Result<(), IoError> {
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub meta: FrameMeta,
    pub frame: Option<RgbImage>,
}

/// Keeps the metadata (and optionally pixels) of every written frame.
#[derive(Debug, Clone, Default)]
pub struct RecorderSink {
    records: Arc<Mutex<Vec<FrameRecord>>>,
    keep_frames: bool,
    delay: Duration,
    finished: Arc<Mutex<bool>>,
}

impl RecorderSink {
    pub fn new(keep_frames: bool, delay: Duration) -> Self {
        RecorderSink {
            keep_frames,
            delay,
            ..Default::default()
        }
    }

    pub fn records(&self) -> Vec<FrameRecord> {
        self.records.lock().unwrap().clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finished(&self) -> bool {
        *self.finished.lock().unwrap()
    }
}

impl FrameSink for RecorderSink {
    fn kind(&self) -> &'static str {
        "recorder"
    }

    fn write(&mut self, frame: &RgbImage, meta: &FrameMeta) -> Result<(), IoError> {
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        self.records.lock().unwrap().push(FrameRecord {
            meta: *meta,
            frame: self.keep_frames.then(|| frame.clone()),
        });
        Ok(())
    }

    fn finish(&mut self) -> Result<(), IoError> {
        *self.finished.lock().unwrap() = true;
        Ok(())
    }
}

struct ImageSequenceSink {
    dir: PathBuf,
    dims: (u32, u32),
    written: u64,
}

impl FrameSink for ImageSequenceSink {
    fn kind(&self) -> &'static str {
        "image_sequence"
    }

    fn write(&mut self, frame: &RgbImage, _meta: &FrameMeta) -> Result<(), IoError> {
        check_dims(self.dims, frame)?;
        frame.save(self.dir.join(format!("native_{:06}.png", self.written)))?;
        self.written += 1;
        Ok(())
    }
}

struct RawPipeSink {
    writer: Box<dyn Write + Send>,
    dims: (u32, u32),
}

impl FrameSink for RawPipeSink {
    fn kind(&self) -> &'static str {
        "raw_pipe"
    }

    fn write(&mut self, frame: &RgbImage, meta: &FrameMeta) -> Result<(), IoError> {
        check_dims(self.dims, frame)?;
        write_frame(&mut self.writer, frame, meta.ts_us)?;
        self.writer.flush()?;
        Ok(())
    }

    fn finish(&mut self) -> Result<(), IoError> {
        self.writer.flush()?;
        Ok(())
    }
}

/// Streams framed native images to every client connected to a localhost
/// port. Never waits for a client; a client that stalls for more than a
/// second or disconnects is dropped.
pub struct TcpSink {
    listener: TcpListener,
    clients: Vec<BufWriter<TcpStream>>,
    dims: (u32, u32),
}

const CLIENT_WRITE_TIMEOUT: Duration = Duration::from_secs(1);

impl TcpSink {
    /// Port 0 picks a free port; see [`TcpSink::port`].
    pub fn bind(port: u16, dims: (u32, u32)) -> Result<Self, IoError> {
        let listener = TcpListener::bind((Ipv4Addr::LOCALHOST, port))?;
        listener.set_nonblocking(true)?;
        Ok(TcpSink {
            listener,
            clients: Vec::new(),
            dims,
        })
    }

    pub fn port(&self) -> u16 {
        self.listener.local_addr().map(|a| a.port()).unwrap_or(0)
    }

    pub fn client_count(&self) -> usize {
        self.clients.len()
    }

    /// Accepts every pending connection.
    pub fn accept_pending(&mut self) -> Result<(), IoError> {
        loop {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    stream.set_write_timeout(Some(CLIENT_WRITE_TIMEOUT))?;
                    stream.set_nodelay(true)?;
                    self.clients.push(BufWriter::new(stream));
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => return Ok(()),
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl FrameSink for TcpSink {
    fn kind(&self) -> &'static str {
        "tcp_stream"
    }

    fn write(&mut self, frame: &RgbImage, meta: &FrameMeta) -> Result<(), IoError> {
        check_dims(self.dims, frame)?;
        self.accept_pending()?;
        self.clients.retain_mut(|c| {
            let ok = write_frame(c, frame, meta.ts_us).is_ok() && c.flush().is_ok();
            if !ok {
                log::info!("dropping tcp client");
            }
            ok
        });
        Ok(())
    }

    fn finish(&mut self) -> Result<(), IoError> {
        for c in &mut self.clients {
            let _ = c.flush();
        }
        self.clients.clear();
        Ok(())
    }
}

/// Opens a sink for native images of `dims`.
pub fn open_sink(spec: &SinkSpec, dims: (u32, u32)) -> Result<Box<dyn FrameSink>, IoError> {
    Ok(match spec {
        SinkSpec::ImageSequence { path } => {
            fs::create_dir_all(path)?;
            Box::new(ImageSequenceSink {
                dir: path.clone(),
                dims,
                written: 0,
            })
        }
        SinkSpec::RawPipe { path } => {
            let writer: Box<dyn Write + Send> = match path {
                Some(p) => Box::new(BufWriter::new(File::create(p)?)),
                None => Box::new(BufWriter::new(io::stdout())),
            };
            Box::new(RawPipeSink { writer, dims })
        }
        SinkSpec::Tcp { port } => Box::new(TcpSink::bind(*port, dims)?),
        SinkSpec::Window { .. } => return Err(IoError::Unsupported("window".into())),
        SinkSpec::Null => Box::new(NullSink::default()),
    })
}
