#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>

#include <png.h>

#include "mantis/data.hpp"

namespace mantis {

// Reads an 8-bit PNG into (C,H,W) with values in [0,1]; C is 3 unless
// `force_gray`, in which case the file is collapsed to a single channel.
inline Tensor read_png(const std::string& path, bool force_gray = false) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw std::runtime_error("read_png: cannot open " + path + ": " + image.message);
    image.format = force_gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr))
        throw std::runtime_error("read_png: decode failed for " + path + ": " + image.message);
    long long H = image.height, W = image.width;
    long long C = force_gray ? 1 : 3;
    Tensor out(Shape{C, H, W});
    for (long long y = 0; y < H; ++y)
        for (long long x = 0; x < W; ++x)
            for (long long c = 0; c < C; ++c)
                out.at3(c, y, x) = static_cast<double>(buffer[static_cast<size_t>((y * W + x) * C + c)]) / 255.0;
    return out;
}

namespace detail {
inline png_byte to_byte(double v) {
    return static_cast<png_byte>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
}
}  // namespace detail

// (H,W) in [0,1] -> 8-bit grayscale PNG
inline void write_png_gray(const std::string& path, const Tensor& img) {
    if (img.rank() != 2) throw std::invalid_argument("write_png_gray: rank-2 tensor required");
    long long H = img.dim(0), W = img.dim(1);
    std::vector<png_byte> buffer(static_cast<size_t>(H * W));
    for (long long i = 0; i < H * W; ++i) buffer[static_cast<size_t>(i)] = detail::to_byte(img[i]);
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(W);
    image.height = static_cast<png_uint_32>(H);
    image.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr))
        throw std::runtime_error("write_png_gray: write failed for " + path + ": " + image.message);
}

// (3,H,W) in [0,1] -> 8-bit RGB PNG
inline void write_png_rgb(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.dim(0) != 3)
        throw std::invalid_argument("write_png_rgb: (3,H,W) tensor required");
    long long H = img.dim(1), W = img.dim(2);
    std::vector<png_byte> buffer(static_cast<size_t>(H * W * 3));
    for (long long y = 0; y < H; ++y)
        for (long long x = 0; x < W; ++x)
            for (long long c = 0; c < 3; ++c)
                buffer[static_cast<size_t>((y * W + x) * 3 + c)] = detail::to_byte(img.at3(c, y, x));
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(W);
    image.height = static_cast<png_uint_32>(H);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr))
        throw std::runtime_error("write_png_rgb: write failed for " + path + ": " + image.message);
}

// Dataset layout on disk: root/{train,val,test}/{A,B,label}/<name>.png with
// 8-bit RGB for the two dates and a {0,255} single-channel change label.
// root/<split>/manifest.txt, when present, lists the stems to load.
inline std::vector<ChipPair> load_dataset_dir(const std::string& root, const std::string& split) {
    namespace fs = std::filesystem;
    fs::path base = fs::path(root) / split;
    fs::path a_dir = base / "A", b_dir = base / "B", l_dir = base / "label";
    if (!fs::is_directory(a_dir) || !fs::is_directory(b_dir) || !fs::is_directory(l_dir))
        throw std::runtime_error("load_dataset_dir: missing A/B/label under " + base.string());

    std::vector<std::string> stems;
    fs::path manifest = base / "manifest.txt";
    if (fs::exists(manifest)) {
        std::ifstream in(manifest);
        std::string line;
        while (std::getline(in, line)) {
            while (!line.empty() && (line.back() == '\r' || line.back() == '\n' || line.back() == ' '))
                line.pop_back();
            if (!line.empty()) stems.push_back(line);
        }
    } else {
        for (const auto& e : fs::directory_iterator(a_dir))
            if (e.path().extension() == ".png") stems.push_back(e.path().stem().string());
        std::sort(stems.begin(), stems.end());
    }

    std::vector<ChipPair> chips;
    for (const auto& stem : stems) {
        ChipPair chip;
        chip.name = stem;
        chip.t1 = read_png((a_dir / (stem + ".png")).string());
        chip.t2 = read_png((b_dir / (stem + ".png")).string());
        Tensor label = read_png((l_dir / (stem + ".png")).string(), /*force_gray=*/true);
        long long H = label.dim(1), W = label.dim(2);
        if (chip.t1.dim(1) != H || chip.t1.dim(2) != W || chip.t2.dim(1) != H || chip.t2.dim(2) != W)
            throw std::runtime_error("load_dataset_dir: size mismatch for " + stem);
        chip.mask = Tensor(Shape{H, W});
        for (long long i = 0; i < H * W; ++i) chip.mask[i] = label[i] > 0.5 ? 1.0 : 0.0;
        chip.distance = gen_distance_gt(chip.mask);
        chip.boundary = gen_boundary_gt(chip.mask);
        chips.push_back(std::move(chip));
    }
    return chips;
}

inline void save_chip_png(const std::string& root, const std::string& split, const ChipPair& chip) {
    namespace fs = std::filesystem;
    fs::path base = fs::path(root) / split;
    fs::create_directories(base / "A");
    fs::create_directories(base / "B");
    fs::create_directories(base / "label");
    write_png_rgb((base / "A" / (chip.name + ".png")).string(), chip.t1);
    write_png_rgb((base / "B" / (chip.name + ".png")).string(), chip.t2);
    write_png_gray((base / "label" / (chip.name + ".png")).string(), chip.mask);
}

}  // namespace mantis
