"""auctionlab: a decision-theoretic bidding laboratory for simultaneous
travel auctions."""

__version__ = "0.1.0"
