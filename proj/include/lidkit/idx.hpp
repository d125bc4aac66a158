#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "lidkit/error.hpp"
#include "lidkit/nn.hpp"

namespace lidkit {

struct IdxImages {
    std::size_t count = 0, rows = 0, cols = 0;
    std::vector<double> pixels;  // row-major per image, scaled to [0,1]
};

namespace detail {

inline std::uint32_t read_u32_be(const std::vector<unsigned char>& buf, std::size_t off) {
    if (off + 4 > buf.size()) throw ParseError("truncated header", off);
    return (std::uint32_t(buf[off]) << 24) | (std::uint32_t(buf[off + 1]) << 16) |
           (std::uint32_t(buf[off + 2]) << 8) | std::uint32_t(buf[off + 3]);
}

inline std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path, 0);
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                      std::istreambuf_iterator<char>());
}

}  // namespace detail

inline IdxImages parse_idx_images(const std::string& path) {
    auto buf = detail::read_file(path);
    if (detail::read_u32_be(buf, 0) != 0x00000803u)
        throw ParseError("bad image magic in " + path, 0);
    IdxImages out;
    out.count = detail::read_u32_be(buf, 4);
    out.rows = detail::read_u32_be(buf, 8);
    out.cols = detail::read_u32_be(buf, 12);
    const std::size_t need = 16 + out.count * out.rows * out.cols;
    if (buf.size() < need) throw ParseError("truncated image data in " + path, buf.size());
    out.pixels.resize(out.count * out.rows * out.cols);
    for (std::size_t i = 0; i < out.pixels.size(); ++i)
        out.pixels[i] = static_cast<double>(buf[16 + i]) / 255.0;
    return out;
}

inline std::vector<int> parse_idx_labels(const std::string& path) {
    auto buf = detail::read_file(path);
    if (detail::read_u32_be(buf, 0) != 0x00000801u)
        throw ParseError("bad label magic in " + path, 0);
    std::size_t count = detail::read_u32_be(buf, 4);
    if (buf.size() < 8 + count) throw ParseError("truncated label data in " + path, buf.size());
    std::vector<int> labels(count);
    for (std::size_t i = 0; i < count; ++i) labels[i] = static_cast<int>(buf[8 + i]);
    return labels;
}

// Box-average downsampling to out x out (bins cover [i*n/out, (i+1)*n/out)).
inline std::vector<double> downsample(const std::vector<double>& img, std::size_t rows,
                                      std::size_t cols, std::size_t out) {
    if (img.size() != rows * cols) throw ShapeError("downsample: size mismatch");
    if (out == 0 || out > rows || out > cols) throw ShapeError("downsample: bad output size");
    std::vector<double> small(out * out, 0.0);
    for (std::size_t i = 0; i < out; ++i) {
        std::size_t r0 = i * rows / out, r1 = (i + 1) * rows / out;
        for (std::size_t j = 0; j < out; ++j) {
            std::size_t c0 = j * cols / out, c1 = (j + 1) * cols / out;
            double sum = 0.0;
            for (std::size_t r = r0; r < r1; ++r)
                for (std::size_t c = c0; c < c1; ++c) sum += img[r * cols + c];
            small[i * out + j] = sum / static_cast<double>((r1 - r0) * (c1 - c0));
        }
    }
    return small;
}

// Loads an IDX image/label pair into a flat batch, optionally downsampled.
inline LabeledBatch load_idx(const std::string& image_path, const std::string& label_path,
                             std::size_t downsample_to = 0, std::size_t limit = 0) {
    IdxImages imgs = parse_idx_images(image_path);
    std::vector<int> labels = parse_idx_labels(label_path);
    if (labels.size() != imgs.count)
        throw ParseError("image/label count mismatch", 8);
    std::size_t n = limit > 0 ? std::min(limit, imgs.count) : imgs.count;
    LabeledBatch batch;
    batch.input_width = downsample_to > 0 ? downsample_to * downsample_to : imgs.rows * imgs.cols;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> img(imgs.pixels.begin() + i * imgs.rows * imgs.cols,
                                imgs.pixels.begin() + (i + 1) * imgs.rows * imgs.cols);
        if (downsample_to > 0) img = downsample(img, imgs.rows, imgs.cols, downsample_to);
        batch.push(img, labels[i]);
    }
    return batch;
}

}  // namespace lidkit
