#pragma once

#include "splitwire/wire/endpoint.hpp"
#include "splitwire/wire/frame.hpp"
#include "splitwire/wire/messages.hpp"
#include "splitwire/wire/transfer.hpp"
