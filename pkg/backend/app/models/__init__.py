from app.models.network import FlashDenoiseNet
