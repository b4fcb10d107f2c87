// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0

#include "swinflow/chunked_file.hpp"

#include <cstring>

namespace swinflow {

namespace {

constexpr char kMagic[8] = {'S', 'W', 'C', 'H', 'N', 'K', '0', '1'};
constexpr u64 kVersion = 1;

void put_u64(std::ofstream& out, u64 v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

u64 get_u64(std::ifstream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    u64 v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<u64>(b[i]) << (8 * i);
    return v;
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

u64 fnv1a64(const void* data, std::size_t n, u64 seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    u64 h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

void write_chunked(const std::string& path, const FieldTensor<float>& field, int chunk_h, int chunk_w) {
    const int C = field.channels();
    const int H = field.spec.height;
    const int W = field.spec.width;
    require(chunk_h > 0 && chunk_w > 0, "chunked write: chunk dims must be positive");
    const int ncy = ceil_div(H, chunk_h);
    const int ncx = ceil_div(W, chunk_w);
    const int nchunks = ncy * ncx;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot create container: " + path);

    out.write(kMagic, 8);
    put_u64(out, kVersion);
    put_u64(out, static_cast<u64>(C));
    put_u64(out, static_cast<u64>(H));
    put_u64(out, static_cast<u64>(W));
    put_u64(out, static_cast<u64>(chunk_h));
    put_u64(out, static_cast<u64>(chunk_w));

    const u64 table_pos = 8 + 6 * 8;
    const u64 payload_pos = table_pos + 2 * 8 * static_cast<u64>(nchunks);

    std::vector<u64> offsets(nchunks, 0);
    std::vector<u64> checksums(nchunks, 0);
    std::vector<std::vector<float>> chunks(nchunks);

    u64 pos = payload_pos;
    for (int cy = 0; cy < ncy; ++cy) {
        for (int cx = 0; cx < ncx; ++cx) {
            const int idx = cy * ncx + cx;
            const int y0 = cy * chunk_h, x0 = cx * chunk_w;
            const int hh = std::min(chunk_h, H - y0), ww = std::min(chunk_w, W - x0);
            std::vector<float>& buf = chunks[idx];
            buf.resize(static_cast<std::size_t>(C) * hh * ww);
            std::size_t k = 0;
            for (int c = 0; c < C; ++c)
                for (int y = y0; y < y0 + hh; ++y)
                    for (int x = x0; x < x0 + ww; ++x) buf[k++] = field.at(c, y, x);
            offsets[idx] = pos;
            checksums[idx] = fnv1a64(buf.data(), buf.size() * sizeof(float));
            pos += buf.size() * sizeof(float);
        }
    }

    for (int i = 0; i < nchunks; ++i) put_u64(out, offsets[i]);
    for (int i = 0; i < nchunks; ++i) put_u64(out, checksums[i]);
    for (int i = 0; i < nchunks; ++i) {
        out.write(reinterpret_cast<const char*>(chunks[i].data()),
                  static_cast<std::streamsize>(chunks[i].size() * sizeof(float)));
    }
    if (!out) throw IoError("write failed: " + path);
}

ChunkedReader::ChunkedReader(const std::string& path) : path_(path), file_(path, std::ios::binary) {
    if (!file_) throw IoError("cannot open container: " + path);
    char magic[8];
    file_.read(magic, 8);
    if (!file_ || std::memcmp(magic, kMagic, 8) != 0) throw IoError("bad container magic: " + path);
    const u64 version = get_u64(file_);
    if (version != kVersion) throw IoError("unsupported container version in " + path);
    channels_ = static_cast<int>(get_u64(file_));
    height_ = static_cast<int>(get_u64(file_));
    width_ = static_cast<int>(get_u64(file_));
    chunk_h_ = static_cast<int>(get_u64(file_));
    chunk_w_ = static_cast<int>(get_u64(file_));
    chunks_y_ = ceil_div(height_, chunk_h_);
    chunks_x_ = ceil_div(width_, chunk_w_);
    const int n = chunks_y_ * chunks_x_;
    offsets_.resize(n);
    checksums_.resize(n);
    for (int i = 0; i < n; ++i) offsets_[i] = get_u64(file_);
    for (int i = 0; i < n; ++i) checksums_[i] = get_u64(file_);
    if (!file_) throw IoError("truncated container header: " + path);
}

GridSpec ChunkedReader::grid_spec() const {
    GridSpec s;
    s.height = height_;
    s.width = width_;
    s.channels_prognostic = channels_;
    s.channels_forcing = 0;
    return s;
}

void ChunkedReader::check_rect(const WindowRect& rect) const {
    if (rect.h <= 0 || rect.w <= 0 || rect.y0 < 0 || rect.x0 < 0 || rect.y0 + rect.h > height_ ||
        rect.x0 + rect.w > width_) {
        throw std::out_of_range("window rect [" + std::to_string(rect.y0) + "," + std::to_string(rect.x0) + " " +
                                std::to_string(rect.h) + "x" + std::to_string(rect.w) + "] outside " +
                                std::to_string(height_) + "x" + std::to_string(width_) + " grid");
    }
}

u64 ChunkedReader::chunk_cover(const WindowRect& rect) const {
    check_rect(rect);
    const int cy0 = rect.y0 / chunk_h_, cy1 = (rect.y0 + rect.h - 1) / chunk_h_;
    const int cx0 = rect.x0 / chunk_w_, cx1 = (rect.x0 + rect.w - 1) / chunk_w_;
    return static_cast<u64>(cy1 - cy0 + 1) * static_cast<u64>(cx1 - cx0 + 1);
}

std::vector<float> ChunkedReader::load_chunk(int cy, int cx) {
    const int idx = cy * chunks_x_ + cx;
    const int y0 = cy * chunk_h_, x0 = cx * chunk_w_;
    const int hh = std::min(chunk_h_, height_ - y0), ww = std::min(chunk_w_, width_ - x0);
    std::vector<float> buf(static_cast<std::size_t>(channels_) * hh * ww);
    file_.seekg(static_cast<std::streamoff>(offsets_[idx]));
    file_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!file_) throw IoError("truncated chunk " + std::to_string(idx) + " in " + path_);
    const u64 sum = fnv1a64(buf.data(), buf.size() * sizeof(float));
    if (sum != checksums_[idx]) {
        throw IntegrityError("checksum mismatch in chunk " + std::to_string(idx) + " of " + path_);
    }
    ++chunk_reads_;
    return buf;
}

FieldTensor<float> ChunkedReader::read_window_slice(const WindowRect& rect) {
    check_rect(rect);
    GridSpec spec;
    spec.height = rect.h;
    spec.width = rect.w;
    spec.channels_prognostic = channels_;
    FieldTensor<float> out(spec, channels_);

    const int cy0 = rect.y0 / chunk_h_, cy1 = (rect.y0 + rect.h - 1) / chunk_h_;
    const int cx0 = rect.x0 / chunk_w_, cx1 = (rect.x0 + rect.w - 1) / chunk_w_;
    for (int cy = cy0; cy <= cy1; ++cy) {
        for (int cx = cx0; cx <= cx1; ++cx) {
            const int y0 = cy * chunk_h_, x0 = cx * chunk_w_;
            const int hh = std::min(chunk_h_, height_ - y0), ww = std::min(chunk_w_, width_ - x0);
            const std::vector<float> buf = load_chunk(cy, cx);
            const int ys = std::max(rect.y0, y0), ye = std::min(rect.y0 + rect.h, y0 + hh);
            const int xs = std::max(rect.x0, x0), xe = std::min(rect.x0 + rect.w, x0 + ww);
            for (int c = 0; c < channels_; ++c) {
                for (int y = ys; y < ye; ++y) {
                    for (int x = xs; x < xe; ++x) {
                        const std::size_t k = (static_cast<std::size_t>(c) * hh + (y - y0)) * ww + (x - x0);
                        out.at(c, y - rect.y0, x - rect.x0) = buf[k];
                    }
                }
            }
        }
    }
    return out;
}

}  // namespace swinflow
