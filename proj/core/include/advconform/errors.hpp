#pragma once

#include <stdexcept>
#include <string>

namespace advconform {

// Invalid sizes, ranges or mismatched dimensions supplied by the caller.
class ArgumentError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

// Malformed file contents (bad magic, bad header, unparsable field).
class FormatError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

// Two inputs that must agree do not (e.g. image and label counts).
class ConsistencyError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

// Unreadable, unwritable or truncated files.
class IoError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class InsufficientDataError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class DegenerateGeometryError : public std::domain_error
{
public:
  using std::domain_error::domain_error;
};

class ConfigError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

} // namespace advconform
