#include "orchard/image.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

namespace orchard {

namespace {

// Skips whitespace and '#' comments between header tokens.
int next_header_token(std::istream& in, const std::filesystem::path& path) {
    for (;;) {
        int c = in.peek();
        if (c == EOF) throw IngestionError("unexpected end of header in " + path.string());
        if (c == '#') {
            std::string dummy;
            std::getline(in, dummy);
            continue;
        }
        if (std::isspace(c)) {
            in.get();
            continue;
        }
        int value = 0;
        bool any = false;
        while (std::isdigit(in.peek())) {
            value = value * 10 + (in.get() - '0');
            any = true;
            if (value > 1 << 28) throw IngestionError("header value overflow in " + path.string());
        }
        if (!any) throw IngestionError("malformed header token in " + path.string());
        return value;
    }
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot open image file: " + path.string());

    char magic[2];
    in.read(magic, 2);
    if (!in || magic[0] != 'P') {
        throw IngestionError("not a netpbm image (bad magic): " + path.string());
    }
    const char kind = magic[1];
    bool ascii;
    size_t channels;
    switch (kind) {
        case '2': ascii = true;  channels = 1; break;
        case '3': ascii = true;  channels = 3; break;
        case '5': ascii = false; channels = 1; break;
        case '6': ascii = false; channels = 3; break;
        default:
            throw IngestionError(std::string("unsupported netpbm variant P") + kind + ": " +
                                 path.string());
    }

    const size_t width = static_cast<size_t>(next_header_token(in, path));
    const size_t height = static_cast<size_t>(next_header_token(in, path));
    const int maxval = next_header_token(in, path);
    if (width == 0 || height == 0) {
        throw IngestionError("zero-sized image: " + path.string());
    }
    if (maxval <= 0 || maxval > 255) {
        throw IngestionError("unsupported sample depth (maxval " + std::to_string(maxval) +
                             ", expected <= 255): " + path.string());
    }

    Image img;
    img.width = width;
    img.height = height;
    img.channels = channels;
    img.pixels.assign(channels * width * height, 0.0f);
    const float inv = 1.0f / static_cast<float>(maxval);
    const size_t count = width * height * channels;

    if (ascii) {
        for (size_t i = 0; i < count; ++i) {
            long v;
            if (!(in >> v) || v < 0 || v > maxval) {
                throw IngestionError("corrupt ASCII sample data in " + path.string());
            }
            const size_t pixel = i / channels, c = i % channels;
            img.pixels[c * width * height + pixel] = static_cast<float>(v) * inv;
        }
    } else {
        in.get();  // single whitespace byte after maxval
        std::vector<unsigned char> row(count);
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(count));
        if (!in) throw IngestionError("truncated pixel data in " + path.string());
        for (size_t i = 0; i < count; ++i) {
            const size_t pixel = i / channels, c = i % channels;
            img.pixels[c * width * height + pixel] = static_cast<float>(row[i]) * inv;
        }
    }
    return img;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 3) throw UsageError("write_ppm expects a 3-channel image");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError("cannot open image for writing: " + path.string());
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    std::vector<unsigned char> row(image.width * image.height * 3);
    for (size_t y = 0; y < image.height; ++y) {
        for (size_t x = 0; x < image.width; ++x) {
            for (size_t c = 0; c < 3; ++c) {
                float v = image.at(c, y, x);
                v = std::min(1.0f, std::max(0.0f, v));
                row[(y * image.width + x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        }
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!out) throw IngestionError("failed writing image: " + path.string());
}

Image bilinear_resize(const Image& image, size_t out_width, size_t out_height) {
    if (out_width == 0 || out_height == 0) {
        throw ValidationError("bilinear_resize: target size must be positive");
    }
    if (out_width == image.width && out_height == image.height) return image;

    Image out;
    out.width = out_width;
    out.height = out_height;
    out.channels = image.channels;
    out.pixels.assign(image.channels * out_width * out_height, 0.0f);

    const double sx = static_cast<double>(image.width) / static_cast<double>(out_width);
    const double sy = static_cast<double>(image.height) / static_cast<double>(out_height);

    for (size_t y = 0; y < out_height; ++y) {
        const double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5;
        const double fy0 = std::floor(src_y);
        const float wy = static_cast<float>(src_y - fy0);
        const size_t y0 = static_cast<size_t>(std::max(0.0, std::min(fy0, double(image.height - 1))));
        const size_t y1 =
            static_cast<size_t>(std::max(0.0, std::min(fy0 + 1.0, double(image.height - 1))));
        for (size_t x = 0; x < out_width; ++x) {
            const double src_x = (static_cast<double>(x) + 0.5) * sx - 0.5;
            const double fx0 = std::floor(src_x);
            const float wx = static_cast<float>(src_x - fx0);
            const size_t x0 =
                static_cast<size_t>(std::max(0.0, std::min(fx0, double(image.width - 1))));
            const size_t x1 =
                static_cast<size_t>(std::max(0.0, std::min(fx0 + 1.0, double(image.width - 1))));
            for (size_t c = 0; c < image.channels; ++c) {
                const float p00 = image.at(c, y0, x0);
                const float p01 = image.at(c, y0, x1);
                const float p10 = image.at(c, y1, x0);
                const float p11 = image.at(c, y1, x1);
                const float top = p00 * (1.0f - wx) + p01 * wx;
                const float bottom = p10 * (1.0f - wx) + p11 * wx;
                out.at(c, y, x) = top * (1.0f - wy) + bottom * wy;
            }
        }
    }
    return out;
}

Tensor<float> image_to_tensor(const Image& rgb, bool normalize) {
    if (rgb.channels != 3) throw UsageError("image_to_tensor expects a 3-channel image");
    std::vector<float> data(rgb.pixels);
    if (normalize) {
        const size_t plane = rgb.width * rgb.height;
        for (size_t c = 0; c < 3; ++c) {
            const float mean = kChannelMean[c];
            const float inv_std = 1.0f / kChannelStd[c];
            for (size_t i = 0; i < plane; ++i) {
                data[c * plane + i] = (data[c * plane + i] - mean) * inv_std;
            }
        }
    }
    return Tensor<float>(Shape{3, rgb.height, rgb.width}, std::move(data));
}

Tensor<float> load_and_resize(const std::filesystem::path& path, size_t size) {
    Image img = read_pnm(path);
    if (img.channels == 1) {
        // grayscale rule: replicate the single channel into RGB
        Image rgb;
        rgb.width = img.width;
        rgb.height = img.height;
        rgb.channels = 3;
        rgb.pixels.resize(3 * img.width * img.height);
        for (size_t c = 0; c < 3; ++c) {
            std::copy(img.pixels.begin(), img.pixels.end(),
                      rgb.pixels.begin() + static_cast<ptrdiff_t>(c * img.width * img.height));
        }
        img = std::move(rgb);
    }
    img = bilinear_resize(img, size, size);
    return image_to_tensor(img, true);
}

}  // namespace orchard
