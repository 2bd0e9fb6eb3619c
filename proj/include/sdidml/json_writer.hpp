#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace sdidml {

// Minimal JSON emitter. Objects preserve insertion order so output files have
// a stable, documented key order. Reals print as %.7g; non-finite values
// print as null.
class JsonValue {
  public:
    enum class Kind { null, boolean, integer, real, string, array, object };

    JsonValue() : kind_(Kind::null) {}
    static JsonValue null() { return JsonValue(); }
    static JsonValue boolean(bool b) {
        JsonValue v;
        v.kind_ = Kind::boolean;
        v.bool_ = b;
        return v;
    }
    static JsonValue integer(long long i) {
        JsonValue v;
        v.kind_ = Kind::integer;
        v.int_ = i;
        return v;
    }
    static JsonValue real(double x) {
        JsonValue v;
        v.kind_ = Kind::real;
        v.real_ = x;
        return v;
    }
    static JsonValue string(std::string s) {
        JsonValue v;
        v.kind_ = Kind::string;
        v.str_ = std::move(s);
        return v;
    }
    static JsonValue array() {
        JsonValue v;
        v.kind_ = Kind::array;
        return v;
    }
    static JsonValue object() {
        JsonValue v;
        v.kind_ = Kind::object;
        return v;
    }

    JsonValue& push_back(JsonValue item) {
        items_.push_back(std::move(item));
        return *this;
    }
    JsonValue& set(const std::string& key, JsonValue value) {
        keys_.push_back(key);
        items_.push_back(std::move(value));
        return *this;
    }

    static std::string format_real(double x) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.7g", x);
        return std::string(buf);
    }

    static std::string escape(const std::string& s) {
        std::string out;
        out.reserve(s.size() + 2);
        for (unsigned char c : s) {
            switch (c) {
                case '"': out += "\\\""; break;
                case '\\': out += "\\\\"; break;
                case '\n': out += "\\n"; break;
                case '\r': out += "\\r"; break;
                case '\t': out += "\\t"; break;
                case '\b': out += "\\b"; break;
                case '\f': out += "\\f"; break;
                default:
                    if (c < 0x20) {
                        char buf[8];
                        std::snprintf(buf, sizeof(buf), "\\u%04x", c);
                        out += buf;
                    } else {
                        out += static_cast<char>(c);
                    }
            }
        }
        return out;
    }

    std::string dump(int indent = 2) const {
        std::string out;
        write(out, indent, 0);
        out += "\n";
        return out;
    }

  private:
    void write(std::string& out, int indent, int depth) const {
        const std::string pad(static_cast<std::size_t>(indent) * (depth + 1), ' ');
        const std::string close_pad(static_cast<std::size_t>(indent) * depth, ' ');
        switch (kind_) {
            case Kind::null: out += "null"; break;
            case Kind::boolean: out += bool_ ? "true" : "false"; break;
            case Kind::integer: out += std::to_string(int_); break;
            case Kind::real:
                if (std::isfinite(real_)) out += format_real(real_);
                else out += "null";
                break;
            case Kind::string:
                out += '"';
                out += escape(str_);
                out += '"';
                break;
            case Kind::array:
                if (items_.empty()) {
                    out += "[]";
                    break;
                }
                out += "[\n";
                for (std::size_t i = 0; i < items_.size(); ++i) {
                    out += pad;
                    items_[i].write(out, indent, depth + 1);
                    if (i + 1 < items_.size()) out += ',';
                    out += '\n';
                }
                out += close_pad;
                out += ']';
                break;
            case Kind::object:
                if (items_.empty()) {
                    out += "{}";
                    break;
                }
                out += "{\n";
                for (std::size_t i = 0; i < items_.size(); ++i) {
                    out += pad;
                    out += '"';
                    out += escape(keys_[i]);
                    out += "\": ";
                    items_[i].write(out, indent, depth + 1);
                    if (i + 1 < items_.size()) out += ',';
                    out += '\n';
                }
                out += close_pad;
                out += '}';
                break;
        }
    }

    Kind kind_;
    bool bool_ = false;
    long long int_ = 0;
    double real_ = 0.0;
    std::string str_;
    std::vector<std::string> keys_;
    std::vector<JsonValue> items_;
};

} // namespace sdidml
