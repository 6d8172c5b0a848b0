// Internal: compact, allocation-light JSON object writer used for JSON Lines
// output. Field order is the call order; doubles use the shortest
// round-tripping representation.
#pragma once

#include <charconv>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace opsforge::detail {

inline void append_json_escaped(std::string& out, std::string_view s) {
  out.push_back('"');
  for (char c : s) {
    switch (c) {
      case '"':
        out += "\\\"";
        break;
      case '\\':
        out += "\\\\";
        break;
      case '\n':
        out += "\\n";
        break;
      case '\r':
        out += "\\r";
        break;
      case '\t':
        out += "\\t";
        break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          static constexpr char kHex[] = "0123456789abcdef";
          out += "\\u00";
          out.push_back(kHex[(c >> 4) & 0xF]);
          out.push_back(kHex[c & 0xF]);
        } else {
          out.push_back(c);
        }
    }
  }
  out.push_back('"');
}

inline void append_double(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

inline void append_int(std::string& out, int64_t v) {
  char buf[24];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

class JsonObjectWriter {
 public:
  JsonObjectWriter() {
    out_.reserve(320);
    out_.push_back('{');
  }

  void string(std::string_view key, std::string_view value) {
    this->key(key);
    append_json_escaped(out_, value);
  }
  void optional_string(std::string_view key, const std::optional<std::string>& v) {
    if (v) {
      string(key, *v);
    } else {
      null(key);
    }
  }
  void integer(std::string_view key, int64_t value) {
    this->key(key);
    append_int(out_, value);
  }
  void optional_integer(std::string_view key, const std::optional<int64_t>& v) {
    if (v) {
      integer(key, *v);
    } else {
      null(key);
    }
  }
  void number(std::string_view key, double value) {
    this->key(key);
    append_double(out_, value);
  }
  void optional_number(std::string_view key, const std::optional<double>& v) {
    if (v) {
      number(key, *v);
    } else {
      null(key);
    }
  }
  void boolean(std::string_view key, bool value) {
    this->key(key);
    out_ += value ? "true" : "false";
  }
  void null(std::string_view key) {
    this->key(key);
    out_ += "null";
  }

  std::string finish() {
    out_.push_back('}');
    return std::move(out_);
  }

 private:
  void key(std::string_view k) {
    if (!first_) {
      out_.push_back(',');
    }
    first_ = false;
    append_json_escaped(out_, k);
    out_.push_back(':');
  }

  std::string out_;
  bool first_ = true;
};

} // namespace opsforge::detail
