//! Verdict sinks: CSV text, wire messages over TCP, annotated PPM frames.

use std::io::Write;
use std::net::TcpStream;
use std::path::PathBuf;

use super::{annotate_frame, encode_message, FrameVerdict, PipelineError};
use crate::imgcore::QuadFrame;
use crate::roi::RoiConfig;

pub const CSV_HEADER: &str = "frame,roi,mode,class,confidence";

pub trait Sink: Send {
    fn emit(&mut self, frame: &QuadFrame, verdict: &FrameVerdict) -> Result<(), PipelineError>;
    fn finish(&mut self) -> std::io::Result<()>;
}

/// One row per occupied or labelled ROI. Unlabelled rows leave class and
/// confidence empty; labelled but unoccupied ROIs have mode `empty`.
pub struct CsvSink<W: Write> {
    out: csv::Writer<W>,
    names: Vec<String>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(out: W, class_names: Vec<String>) -> Result<Self, PipelineError> {
        let mut out = csv::Writer::from_writer(out);
        out.write_record(CSV_HEADER.split(',')).map_err(csv_err)?;
        Ok(Self {
            out,
            names: class_names,
        })
    }

    pub fn into_inner(self) -> Result<W, PipelineError> {
        self.out
            .into_inner()
            .map_err(|e| PipelineError::Io(std::io::Error::other(e.to_string())))
    }
}

fn csv_err(e: csv::Error) -> PipelineError {
    PipelineError::Io(std::io::Error::other(e))
}

impl<W: Write + Send> Sink for CsvSink<W> {
    fn emit(&mut self, _frame: &QuadFrame, v: &FrameVerdict) -> Result<(), PipelineError> {
        let mut rois: Vec<usize> = v.occupied.keys().chain(v.labels.keys()).copied().collect();
        rois.sort_unstable();
        rois.dedup();
        for roi in rois {
            let mode = v.occupied.get(&roi).map_or("empty", |o| o.as_str());
            let (class, conf) = match v.labels.get(&roi) {
                Some(l) => (
                    self.names
                        .get(l.class_id as usize)
                        .cloned()
                        .unwrap_or_else(|| l.class_id.to_string()),
                    format!("{:.4}", l.confidence),
                ),
                None => (String::new(), String::new()),
            };
            self.out
                .write_record([v.frame_index.to_string(), roi.to_string(), mode.to_string(), class, conf])
                .map_err(csv_err)?;
        }
        Ok(())
    }

    fn finish(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

/// Sends each verdict as a wire message over TCP.
pub struct SocketSink {
    stream: TcpStream,
}

impl SocketSink {
    pub fn connect(addr: &str) -> Result<Self, PipelineError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }
}

impl Sink for SocketSink {
    fn emit(&mut self, _frame: &QuadFrame, v: &FrameVerdict) -> Result<(), PipelineError> {
        self.stream.write_all(&encode_message(v)?)?;
        Ok(())
    }

    fn finish(&mut self) -> std::io::Result<()> {
        self.stream.flush()
    }
}

/// Writes `frame_NNNNN.ppm` overlays into a directory.
pub struct FramesSink {
    dir: PathBuf,
    config: RoiConfig,
    names: Vec<String>,
}

impl FramesSink {
    pub fn new(dir: impl Into<PathBuf>, config: RoiConfig, class_names: Vec<String>) -> Result<Self, PipelineError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            config,
            names: class_names,
        })
    }
}

impl Sink for FramesSink {
    fn emit(&mut self, frame: &QuadFrame, v: &FrameVerdict) -> Result<(), PipelineError> {
        let img = annotate_frame(frame, v, &self.config, &self.names);
        std::fs::write(self.dir.join(format!("frame_{:05}.ppm", v.frame_index)), img.to_ppm())?;
        Ok(())
    }

    fn finish(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::GrayImage;
    use crate::pipeline::{read_message, Label, Occupancy};
    use std::net::TcpListener;

    fn verdict() -> FrameVerdict {
        let mut v = FrameVerdict::empty(5);
        v.occupied.insert(2, Occupancy::Latched);
        v.occupied.insert(0, Occupancy::Moving);
        v.labels.insert(2, Label { class_id: 1, confidence: 0.75 });
        v.labels.insert(7, Label { class_id: 9, confidence: 0.5 });
        v
    }

    fn frame() -> QuadFrame {
        QuadFrame::new(GrayImage::filled(256, 256, 0), 5, 0).unwrap()
    }

    #[test]
    fn csv_rows() {
        let mut s = CsvSink::new(Vec::new(), vec!["a".into(), "bike".into()]).unwrap();
        s.emit(&frame(), &verdict()).unwrap();
        s.emit(&frame(), &FrameVerdict::empty(6)).unwrap();
        s.finish().unwrap();
        let text = String::from_utf8(s.into_inner().unwrap()).unwrap();
        assert_eq!(
            text,
            "frame,roi,mode,class,confidence\n5,0,moving,,\n5,2,latched,bike,0.7500\n5,7,empty,9,0.5000\n"
        );
    }

    #[test]
    fn socket_carries_wire_messages() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let reader = std::thread::spawn(move || {
            let (mut conn, _) = listener.accept().unwrap();
            let mut got = Vec::new();
            while let Some(v) = read_message(&mut conn).unwrap() {
                got.push(v);
            }
            got
        });
        let mut s = SocketSink::connect(&addr).unwrap();
        s.emit(&frame(), &verdict()).unwrap();
        s.emit(&frame(), &FrameVerdict::empty(6)).unwrap();
        s.finish().unwrap();
        drop(s);
        assert_eq!(reader.join().unwrap(), vec![verdict(), FrameVerdict::empty(6)]);
    }

    #[test]
    fn frames_written() {
        let dir = tempfile::tempdir().unwrap();
        let config = crate::roi::default_config(256, 256).unwrap();
        let mut s = FramesSink::new(dir.path().join("out"), config, vec![]).unwrap();
        s.emit(&frame(), &verdict()).unwrap();
        let bytes = std::fs::read(dir.path().join("out/frame_00005.ppm")).unwrap();
        assert!(bytes.starts_with(b"P6\n256 256\n255\n"));
    }
}
