use std::hint::black_box;
use std::io::Cursor;

use aru_core::dsp::{design_bandpass, spectrogram, FrameGate};
use aru_core::hw::{quantize, AudioSource, SourceReader};
use aru_core::pipeline::wav::encode_samples;
use aru_core::pipeline::{run_session, Capture, SessionSpec, WavWriter, WriterLatencyModel};
use aru_core::protocol::{encode_packet, FrameDecoder};
use aru_core::{AudioFormat, DeviceConfig, GateMetric};
use chrono::NaiveDate;
use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

const FS: usize = 48_000;

fn tone(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (std::f64::consts::TAU * 3000.0 * i as f64 / FS as f64).sin())
        .collect()
}

fn dsp(c: &mut Criterion) {
    let x = tone(FS);
    let mut g = c.benchmark_group("dsp");
    g.throughput(Throughput::Elements(FS as u64));
    g.bench_function("bandpass_order4_1s", |b| {
        let cascade = design_bandpass(1000.0, 8000.0, FS as f64, 4).unwrap();
        b.iter_batched(|| cascade.clone(), |mut f| black_box(f.process(&x)), BatchSize::SmallInput)
    });
    g.bench_function("gate_peak_1s", |b| {
        let gate = FrameGate::mono(FS / 20, 0.05, GateMetric::Peak);
        b.iter(|| black_box(gate.gate_frames(&x)))
    });
    g.bench_function("spectrogram_1024_1s", |b| {
        b.iter(|| black_box(spectrogram(&x, 1024, 512, FS as f64).unwrap()))
    });
    g.finish();
}

fn wav(c: &mut Criterion) {
    let codes: Vec<i32> = tone(FS * 2).iter().map(|&v| quantize(v, 16)).collect();
    let mut g = c.benchmark_group("wav");
    g.throughput(Throughput::Bytes(codes.len() as u64 * 2));
    g.bench_function("encode_16bit_stereo_1s", |b| {
        b.iter(|| {
            let mut pcm = Vec::with_capacity(codes.len() * 2);
            encode_samples(&codes, 16, &mut pcm);
            let mut w = WavWriter::new(Cursor::new(Vec::new()), AudioFormat::stereo(48_000, 16)).unwrap();
            w.write_bytes(&pcm).unwrap();
            black_box(w.finalize().unwrap())
        })
    });
    g.finish();
}

fn session(c: &mut Criterion) {
    let start = NaiveDate::from_ymd_opt(2025, 6, 1).unwrap().and_hms_opt(6, 0, 0).unwrap();
    let spec = SessionSpec::from_config(&DeviceConfig::default(), start, 10.0, WriterLatencyModel::fixed(0.004));
    let source = AudioSource::Noise { amplitude: 0.5, seed: 7 };
    let mut g = c.benchmark_group("session");
    g.sample_size(10);
    g.throughput(Throughput::Bytes(2 * 192_000 * 10));
    g.bench_function("audio_10s", |b| {
        b.iter(|| {
            let mut reader = SourceReader::open(&source, 48_000).unwrap();
            let sinks = [Cursor::new(Vec::new()), Cursor::new(Vec::new())];
            black_box(run_session(&spec, Capture::Audio(&mut reader), sinks).unwrap())
        })
    });
    g.bench_function("accounting_10s", |b| {
        b.iter(|| {
            let sinks = [Cursor::new(Vec::new()), Cursor::new(Vec::new())];
            black_box(run_session(&spec, Capture::Accounting, sinks).unwrap())
        })
    });
    g.finish();
}

fn frames(c: &mut Criterion) {
    let mut stream = Vec::new();
    for i in 0..1000u32 {
        let payload: Vec<u8> = (0..64).map(|j| (i as u8).wrapping_add(j)).collect();
        stream.extend(encode_packet(0x09, &payload).unwrap());
        if i % 10 == 0 {
            stream.extend_from_slice(&[0x00, 0xAA, 0x13]);
        }
    }
    let mut g = c.benchmark_group("protocol");
    g.throughput(Throughput::Bytes(stream.len() as u64));
    g.bench_function("decode_stream", |b| {
        b.iter(|| {
            let mut dec = FrameDecoder::new();
            let mut events = Vec::new();
            for chunk in stream.chunks(512) {
                dec.push(chunk);
                events.extend(dec.drain_events());
            }
            events.extend(dec.finish());
            black_box(events)
        })
    });
    g.finish();
}

criterion_group!(benches, dsp, wav, session, frames);
criterion_main!(benches);
