// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Chunked binary container for gridded fields, built for partial reads: a
// window slice touches only the chunks overlapping its rect. All integers are
// little-endian 8-byte, payload floats are 4-byte. Layout:
//
//   magic[8] | version | channels H W | chunk_h chunk_w
//   | chunk offset table | chunk checksum table
//   | chunks, row-major (c, y, x) within each clipped chunk
//
// Chunks cover the grid as the ceil-cover of (chunk_h x chunk_w) tiles, edge
// tiles clipped. Each chunk holds all channels of its tile.

#pragma once

#include "swinflow/grid.hpp"

#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace swinflow {

struct WindowRect {
    int y0 = 0;
    int x0 = 0;
    int h = 0;
    int w = 0;
};

/// FNV-1a 64-bit over a byte range.
u64 fnv1a64(const void* data, std::size_t n, u64 seed = 0xcbf29ce484222325ULL);

void write_chunked(const std::string& path, const FieldTensor<float>& field, int chunk_h, int chunk_w);

class ChunkedReader {
public:
    explicit ChunkedReader(const std::string& path);

    int channels() const { return channels_; }
    int height() const { return height_; }
    int width() const { return width_; }
    int chunk_h() const { return chunk_h_; }
    int chunk_w() const { return chunk_w_; }
    GridSpec grid_spec() const;

    /// Chunks touched since construction (or reset); exposed so tests can
    /// assert that partial reads stay partial.
    u64 chunk_reads() const { return chunk_reads_; }
    void reset_chunk_reads() { chunk_reads_ = 0; }

    /// Number of chunks the ceil-cover of `rect` spans.
    u64 chunk_cover(const WindowRect& rect) const;

    /// Read one window rect (all channels). Throws std::out_of_range for a
    /// rect outside the grid and IntegrityError on checksum mismatch.
    FieldTensor<float> read_window_slice(const WindowRect& rect);

    FieldTensor<float> read_full() { return read_window_slice({0, 0, height_, width_}); }

private:
    void check_rect(const WindowRect& rect) const;
    std::vector<float> load_chunk(int cy, int cx);

    std::string path_;
    mutable std::ifstream file_;
    int channels_ = 0, height_ = 0, width_ = 0;
    int chunk_h_ = 0, chunk_w_ = 0;
    int chunks_y_ = 0, chunks_x_ = 0;
    std::vector<u64> offsets_;
    std::vector<u64> checksums_;
    u64 chunk_reads_ = 0;
};

}  // namespace swinflow
