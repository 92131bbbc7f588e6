#pragma once

#include "attnprice/error.hpp"
#include "attnprice/numeric.hpp"
#include "attnprice/grad_check.hpp"
#include "attnprice/params.hpp"
#include "attnprice/optim.hpp"
#include "attnprice/data.hpp"
#include "attnprice/autoencoder.hpp"
#include "attnprice/recurrent.hpp"
#include "attnprice/attention.hpp"
#include "attnprice/model.hpp"
#include "attnprice/training.hpp"
#include "attnprice/metrics.hpp"
#include "attnprice/backtest.hpp"
#include "attnprice/synth.hpp"
#include "attnprice/pipeline.hpp"
