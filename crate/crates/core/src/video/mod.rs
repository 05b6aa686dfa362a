//! Clip decoding, frame extraction and corpus scanning.

mod decode;
mod ingest;

pub use decode::{
    count_frames, decode_clip, is_clip_path, write_gif, write_y4m, ClipFrames, CLIP_EXTENSIONS,
};
pub use ingest::{
    build_manifest, extract_corpus, extract_frames, frame_file_stem, parse_frame_file_stem,
    ClipRef, CorpusScan, STILL_JPEG_QUALITY,
};
